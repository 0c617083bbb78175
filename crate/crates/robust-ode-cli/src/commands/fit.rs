use std::path::PathBuf;

use robust_ode::dynamics_fit::{cv_select, fit_gradient_matching, FitOptions};
use robust_ode::io::{read_trajectory_csv, write_json};
use serde::Serialize;

use super::{CmdResult, Context, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Trajectory CSV (t,xhat_1..p,dhat_1..p,sigma_1..p), e.g. the robust
    /// trajectory emitted by `pipeline` or a smoothed source
    #[arg(long, value_name = "CSV")]
    pub input: PathBuf,
    /// Gaussian kernel length scale (omit for the spread heuristic)
    #[arg(long, conflicts_with = "auto")]
    pub bandwidth: Option<f64>,
    /// Select bandwidth and ridge by five-fold cross-validation
    #[arg(long)]
    pub auto: bool,
    /// Ridge added to the kernel matrix (defaults to 1e-4 per sample)
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Append scaled time as an input coordinate
    #[arg(long)]
    pub include_time: bool,
    /// Output model JSON (centers, coefficients, hyperparameters)
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let input = ctx.resolve(&args.input);
    let table = read_trajectory_csv(&input).stage("fit")?;
    let times = table.grid.times().to_vec();
    let mut opts = FitOptions {
        bandwidth: args.bandwidth,
        ridge: args.ridge,
        include_time: args.include_time,
        ..FitOptions::default()
    };
    if args.auto {
        let (bw, ridge) = cv_select(
            &table.x,
            &table.d,
            &times,
            &opts,
            &[0.5, 1.0, 2.0],
            &[0.01, 1.0, 100.0],
        )
        .stage("fit")?;
        opts.bandwidth = Some(bw);
        opts.ridge = Some(ridge);
    }
    let fitted = fit_gradient_matching(&table.x, &table.d, &times, &opts).stage("fit")?;
    let out = ctx.resolve(&args.out);
    write_json(&out, &fitted).stage("fit")?;
    super::write_meta(ctx, "fit", &out, false, &args).stage("fit")?;
    println!(
        "fitted {} centers (bandwidth {:.6}, ridge {:.3e}) -> {}",
        fitted.centers.rows(),
        fitted.kernel_bandwidth,
        fitted.ridge,
        out.display()
    );
    Ok(())
}
