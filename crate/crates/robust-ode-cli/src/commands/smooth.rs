use std::path::PathBuf;

use robust_ode::io::{read_source_csv, write_smoothed_csv};
use robust_ode::smoothing::{
    inference_bandwidth, select_bandwidth, smooth_source, SmoothingConfig,
};
use serde::Serialize;

use super::{parse_kernel, CmdResult, Context, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Observation CSV with header t,Y_1..Y_p
    #[arg(long, value_name = "CSV")]
    pub input: PathBuf,
    /// Fixed bandwidth in data time units
    #[arg(long, conflicts_with = "auto_h")]
    pub h: Option<f64>,
    /// Select the bandwidth by leave-one-out cross-validation
    #[arg(long)]
    pub auto_h: bool,
    /// Apply the undersmoothing factor to the CV bandwidth (inference runs)
    #[arg(long, default_value_t = 0.7)]
    pub undersmooth: f64,
    /// Standard-error bandwidth (defaults to 5x the value bandwidth)
    #[arg(long)]
    pub h_se: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, value_parser = ["epanechnikov", "gaussian"], default_value = "gaussian")]
    pub kernel: String,
    /// Uniform evaluation grid size (defaults to the observation grid)
    #[arg(long)]
    pub eval_points: Option<usize>,
    /// Output CSV with columns t,xhat_1..p,dhat_1..p,sigma_1..p
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let input = ctx.resolve(&args.input);
    let series = read_source_csv(&input).stage("smooth")?;
    let kernel = parse_kernel(&args.kernel).stage("smooth")?;
    let probe = SmoothingConfig {
        order: args.order,
        kernel,
        undersmooth_factor: args.undersmooth,
        ..SmoothingConfig::with_bandwidth(1.0)
    };
    let h = match (args.h, args.auto_h) {
        (Some(h), _) => h,
        (None, true) => {
            let mut hs = Vec::new();
            for j in 0..series.y.cols() {
                let col = series.y.col(j);
                hs.push(
                    select_bandwidth(series.grid.times(), &col, &probe).stage("smooth")?,
                );
            }
            hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            inference_bandwidth(hs[hs.len() / 2], &probe)
        }
        (None, false) => {
            return Err(robust_ode::Error::InvalidConfig(
                "pass --h <bandwidth> or --auto-h".into(),
            ))
            .stage("smooth");
        }
    };
    let config = SmoothingConfig {
        h,
        h_se: args.h_se.unwrap_or(5.0 * h),
        ..probe
    };
    let eval_grid = match args.eval_points {
        Some(m) => {
            let span = series.grid.span();
            let first = series.grid.first();
            let times: Vec<f64> = (0..m)
                .map(|i| first + span * i as f64 / (m - 1) as f64)
                .collect();
            robust_ode::TimeGrid::from_times(times).stage("smooth")?
        }
        None => series.grid.clone(),
    };
    let sm = smooth_source(&series.y, &series.grid, &eval_grid, &config).stage("smooth")?;
    let out = ctx.resolve(&args.out);
    write_smoothed_csv(&out, &sm).stage("smooth")?;
    super::write_meta(ctx, "smooth", &out, false, &args).stage("smooth")?;
    println!(
        "smoothed {} (p = {}) with h = {:.6} onto {} points -> {}",
        input.display(),
        series.y.cols(),
        h,
        eval_grid.len(),
        out.display()
    );
    Ok(())
}
