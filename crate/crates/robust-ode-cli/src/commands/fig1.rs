use std::path::PathBuf;

use robust_ode::io::format_float;
use robust_ode::weights::{stability_experiment, StabilityRule};
use robust_ode::Error;
use serde::Serialize;

use super::{CmdResult, Context, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Number of seeded replications per grid point
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,
    /// Comma-separated sample sizes
    #[arg(
        long,
        default_value = "10,20,50,100,200,500,1000,2000,5000,10000,20000"
    )]
    pub n_grid: String,
    /// Output CSV with columns rule,n,median,q25,q75
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let n_grid: std::result::Result<Vec<usize>, _> = args
        .n_grid
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect();
    let n_grid = n_grid
        .map_err(|_| Error::InvalidConfig(format!("bad --n-grid `{}`", args.n_grid)))
        .stage("fig1")?;
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let curves =
        stability_experiment(&n_grid, &StabilityRule::all(), &seeds).stage("fig1")?;
    let out = ctx.resolve(&args.out);
    let payload = if ctx.format == "json" {
        serde_json::to_string_pretty(&curves).map_err(Error::from).stage("fig1")? + "\n"
    } else {
        let mut s = String::from("rule,n,median,q25,q75\n");
        for c in &curves {
            for (i, &n) in c.n_grid.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.rule,
                    n,
                    format_float(c.median[i]),
                    format_float(c.q25[i]),
                    format_float(c.q75[i])
                ));
            }
        }
        s
    };
    std::fs::write(&out, payload)
        .map_err(|e| Error::Io {
            path: out.display().to_string(),
            source: e,
        })
        .stage("fig1")?;
    super::write_meta(ctx, "fig1", &out, false, &args).stage("fig1")?;
    println!(
        "stability curves over n = {:?} ({} seeds) -> {}",
        n_grid,
        args.seeds,
        out.display()
    );
    Ok(())
}
