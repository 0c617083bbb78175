use std::path::PathBuf;

use robust_ode::io::{write_latent_csv, write_source_csv};
use robust_ode::ode::{generate_sources, SimulationConfig};
use robust_ode::TimeGrid;
use serde::Serialize;

use super::{ensure_dir, parse_case, parse_example, parse_level, CmdResult, Context, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Benchmark system
    #[arg(long, value_parser = ["enzyme", "lv"])]
    pub example: String,
    /// Heterogeneity level
    #[arg(long, value_parser = ["1", "2", "3"], default_value = "1")]
    pub level: String,
    /// Design case
    #[arg(long, value_parser = ["stable", "unstable"], default_value = "stable")]
    pub case: String,
    /// Number of sources K
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Observation count per source (defaults to the benchmark design)
    #[arg(long)]
    pub n: Option<usize>,
    /// Observation horizon T (defaults to the benchmark design)
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Noise standard deviation (defaults to the benchmark design)
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write latent_<k>.csv with true states and derivatives
    #[arg(long)]
    pub latent: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let kind = parse_example(&args.example).stage("simulate")?;
    let level = parse_level(&args.level).stage("simulate")?;
    let case = parse_case(&args.case).stage("simulate")?;
    let mut config =
        SimulationConfig::benchmark(kind, args.k, level, case, args.seed).stage("simulate")?;
    if args.n.is_some() || args.horizon.is_some() {
        let n = args.n.unwrap_or(config.grid.len());
        let horizon = args.horizon.unwrap_or(config.grid.horizon());
        config.grid = TimeGrid::uniform(n, horizon).stage("simulate")?;
    }
    if let Some(sd) = args.noise_sd {
        config.noise_sd = sd;
    }
    let obs = generate_sources(&config).stage("simulate")?;
    let out = ctx.resolve(&args.out);
    ensure_dir(&out).stage("simulate")?;
    for (i, src) in obs.sources.iter().enumerate() {
        write_source_csv(&out.join(format!("source_{}.csv", i + 1)), src).stage("simulate")?;
    }
    if args.latent {
        for (i, latent) in obs.latent.as_ref().unwrap().iter().enumerate() {
            write_latent_csv(&out.join(format!("latent_{}.csv", i + 1)), &config.grid, latent)
                .stage("simulate")?;
        }
    }
    super::write_meta(ctx, "simulate", &out, true, &args).stage("simulate")?;
    println!(
        "wrote {} sources (n = {}, T = {}) to {}",
        obs.sources.len(),
        config.grid.len(),
        config.grid.horizon(),
        out.display()
    );
    Ok(())
}
