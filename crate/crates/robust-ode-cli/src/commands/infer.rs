use std::path::PathBuf;

use robust_ode::evaluation::estimate_subjects;
use robust_ode::io::{ingest_multisubject_csv, write_intervals_csv};
use robust_ode::ode::SourceSeries;
use robust_ode::robust::confidence_band;
use serde::Serialize;

use super::{CmdResult, Context, EstimationOpts, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Directory of observation CSVs, one per source
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Nominal miscoverage level of the pointwise intervals
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Evaluation grid size over the sources' common window
    #[arg(long, default_value_t = 200)]
    pub eval_points: usize,
    #[command(flatten)]
    pub est: EstimationOpts,
    /// Output CSV with columns t,dim,xhat,lo,hi,sigma
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let dir = ctx.resolve(&args.input);
    let subjects = ingest_multisubject_csv(&dir).stage("infer")?;
    let refs: Vec<&SourceSeries> = subjects.iter().collect();
    let settings = args.est.settings().stage("infer")?;
    let est = estimate_subjects(&refs, &settings, args.eval_points).stage("infer")?;
    let band = confidence_band(&est.robust, args.alpha).stage("infer")?;
    let out = ctx.resolve(&args.out);
    write_intervals_csv(&out, &est.robust, &band).stage("infer")?;
    super::write_meta(ctx, "infer", &out, false, &args).stage("infer")?;
    println!(
        "robust trajectory over {} sources (d_n = {:.6}, omega = {:?}) -> {}",
        subjects.len(),
        est.tolerance.absolute(),
        est.weights
            .omega
            .iter()
            .map(|w| (w * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>(),
        out.display()
    );
    Ok(())
}
