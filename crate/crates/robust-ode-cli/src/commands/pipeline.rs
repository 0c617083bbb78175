use std::path::PathBuf;

use robust_ode::dynamics_fit::{fit_gradient_matching, trim_mask, FitOptions};
use robust_ode::evaluation::estimate_subjects;
use robust_ode::io::{
    ingest_multisubject_csv, write_intervals_csv, write_json, write_robust_csv,
    write_smoothed_csv, GammaArtifact,
};
use robust_ode::linalg::Mat;
use robust_ode::ode::SourceSeries;
use robust_ode::robust::confidence_band;
use serde::Serialize;

use super::{ensure_dir, CmdResult, Context, EstimationOpts, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Directory of observation CSVs, one per source
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Evaluation grid size over the sources' common window
    #[arg(long, default_value_t = 200)]
    pub eval_points: usize,
    /// Link-fit kernel bandwidth (omit for the spread heuristic)
    #[arg(long)]
    pub fit_bandwidth: Option<f64>,
    /// Link-fit ridge (omit for the per-sample default)
    #[arg(long)]
    pub fit_ridge: Option<f64>,
    #[command(flatten)]
    pub est: EstimationOpts,
    /// Output directory for the stage artifacts
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let dir = ctx.resolve(&args.input);
    let out = ctx.resolve(&args.out);
    ensure_dir(&out).stage("pipeline")?;

    let subjects = ingest_multisubject_csv(&dir).stage("pipeline/ingest")?;
    let refs: Vec<&SourceSeries> = subjects.iter().collect();
    let settings = args.est.settings().stage("pipeline")?;

    let est = estimate_subjects(&refs, &settings, args.eval_points).stage("pipeline/estimate")?;
    for (i, sm) in est.smoothed.iter().enumerate() {
        write_smoothed_csv(&out.join(format!("smoothed_{}.csv", i + 1)), sm)
            .stage("pipeline/smooth")?;
    }
    write_json(&out.join("gamma.json"), &GammaArtifact::new(&est.gamma))
        .stage("pipeline/gamma")?;
    write_json(&out.join("tolerance.json"), &est.tolerance).stage("pipeline/tolerance")?;
    write_json(&out.join("weights.json"), &est.weights).stage("pipeline/weights")?;
    write_robust_csv(&out.join("robust.csv"), &est.robust).stage("pipeline/aggregate")?;

    let band = confidence_band(&est.robust, args.alpha).stage("pipeline/intervals")?;
    write_intervals_csv(&out.join("intervals.csv"), &est.robust, &band)
        .stage("pipeline/intervals")?;

    // link fit on the trimmed robust trajectory
    let keep = trim_mask(&est.robust.eval_grid, settings.fit_trim);
    let mut states = Vec::new();
    let mut derivs = Vec::new();
    let mut times = Vec::new();
    for (i, &t) in est.robust.eval_grid.times().iter().enumerate() {
        if keep[i] {
            states.push(est.robust.x_robust.row(i).to_vec());
            derivs.push(est.robust.d_robust.row(i).to_vec());
            times.push(t);
        }
    }
    let fit = fit_gradient_matching(
        &Mat::from_rows(states).stage("pipeline/fit")?,
        &Mat::from_rows(derivs).stage("pipeline/fit")?,
        &times,
        &FitOptions {
            bandwidth: args.fit_bandwidth,
            ridge: args.fit_ridge,
            ..FitOptions::default()
        },
    )
    .stage("pipeline/fit")?;
    write_json(&out.join("model.json"), &fit).stage("pipeline/fit")?;

    super::write_meta(ctx, "pipeline", &out, true, &args).stage("pipeline")?;
    println!(
        "pipeline over {} sources: omega = {:?}, d_n = {:.6} -> {}",
        subjects.len(),
        est.weights
            .omega
            .iter()
            .map(|w| (w * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>(),
        est.tolerance.absolute(),
        out.display()
    );
    Ok(())
}
