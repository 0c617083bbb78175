use std::path::PathBuf;

use robust_ode::evaluation::leave_one_subject_out;
use robust_ode::io::{format_float, ingest_multisubject_csv};
use robust_ode::Error;
use serde::Serialize;

use super::{CmdResult, Context, EstimationOpts, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Directory of subject CSVs (header t,Y_1..Y_p,trial)
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Evaluation grid size over the training subjects' common window
    #[arg(long, default_value_t = 200)]
    pub eval_points: usize,
    #[command(flatten)]
    pub est: EstimationOpts,
    /// Output CSV of per-held-out-subject pairwise comparison rows
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let dir = ctx.resolve(&args.input);
    let subjects = ingest_multisubject_csv(&dir).stage("loso")?;
    let settings = args.est.settings().stage("loso")?;
    let outcomes =
        leave_one_subject_out(&subjects, &settings, args.eval_points).stage("loso")?;
    let out = ctx.resolve(&args.out);
    let mut csv = String::from(
        "held_out,trials,favorable_vs_erm,favorable_frac,mean_normalized_proposed,mean_normalized_erm\n",
    );
    let mut favorable = 0usize;
    let mut total = 0usize;
    for o in &outcomes {
        favorable += o.favorable_vs_erm;
        total += o.trials;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            o.held_out,
            o.trials,
            o.favorable_vs_erm,
            format_float(o.favorable_vs_erm as f64 / o.trials as f64),
            format_float(o.mean_normalized_proposed),
            format_float(o.mean_normalized_erm),
        ));
    }
    std::fs::write(&out, csv)
        .map_err(|e| Error::Io {
            path: out.display().to_string(),
            source: e,
        })
        .stage("loso")?;
    super::write_meta(ctx, "loso", &out, false, &args).stage("loso")?;
    println!(
        "leave-one-subject-out over {} subjects: {favorable}/{total} favorable trials -> {}",
        outcomes.len(),
        out.display()
    );
    Ok(())
}
