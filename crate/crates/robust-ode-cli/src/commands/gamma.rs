use std::path::PathBuf;

use robust_ode::gamma::{gamma_from_derivatives, split_gamma};
use robust_ode::io::{ingest_multisubject_csv, read_trajectory_csv, write_json, GammaArtifact};
use robust_ode::linalg::Mat;
use robust_ode::ode::SourceObservations;
use robust_ode::Error;
use serde::Serialize;

use super::{CmdResult, Context, EstimationOpts, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Directory of smoothed trajectory CSVs (one per source, shared grid)
    #[arg(long, value_name = "DIR", conflicts_with = "raw")]
    pub input: Option<PathBuf>,
    /// Directory of raw observation CSVs: smooths internally and embeds the
    /// split-sample halves needed by `weights --auto-dn`
    #[arg(long, value_name = "DIR")]
    pub raw: Option<PathBuf>,
    #[command(flatten)]
    pub est: EstimationOpts,
    /// Output JSON artifact
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let out = ctx.resolve(&args.out);
    let artifact = match (&args.input, &args.raw) {
        (Some(dir), None) => {
            let dir = ctx.resolve(dir);
            let mut paths: Vec<_> = std::fs::read_dir(&dir)
                .map_err(|e| Error::Io {
                    path: dir.display().to_string(),
                    source: e,
                })
                .stage("gamma")?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "no .csv files in {}",
                    dir.display()
                )))
                .stage("gamma");
            }
            let mut grids = Vec::new();
            let mut derivs: Vec<Mat> = Vec::new();
            for p in &paths {
                let table = read_trajectory_csv(p).stage("gamma")?;
                grids.push(table.grid);
                derivs.push(table.d);
            }
            for g in &grids[1..] {
                if !g.approx_eq(&grids[0], 1e-12) {
                    return Err(Error::GridMismatch(
                        "smoothed sources use different evaluation grids".into(),
                    ))
                    .stage("gamma");
                }
            }
            let refs: Vec<&Mat> = derivs.iter().collect();
            let gamma =
                gamma_from_derivatives(&refs, &grids[0], args.est.trim).stage("gamma")?;
            GammaArtifact::new(&gamma)
        }
        (None, Some(dir)) => {
            let dir = ctx.resolve(dir);
            let subjects = ingest_multisubject_csv(&dir).stage("gamma")?;
            let obs = SourceObservations {
                sources: subjects,
                latent: None,
                combo_weights: None,
                config: None,
            };
            let settings = args.est.settings().stage("gamma")?;
            let est = robust_ode::evaluation::run_estimation(&obs, &settings, None)
                .stage("gamma")?;
            let grid = obs.shared_grid().ok_or_else(|| {
                Error::GridMismatch(
                    "`gamma --raw` needs a shared observation grid; use `infer` for ragged subjects"
                        .into(),
                )
            }).stage("gamma")?;
            let config = settings.smoothing_config(est.h_used);
            let (g1, g2) = split_gamma(&obs, &config, settings.trim, None).stage("gamma")?;
            GammaArtifact::new(&est.gamma).with_split(&g1, &g2, grid.len())
        }
        _ => {
            return Err(Error::InvalidConfig(
                "pass exactly one of --input <smoothed dir> or --raw <observations dir>".into(),
            ))
            .stage("gamma");
        }
    };
    write_json(&out, &artifact).stage("gamma")?;
    super::write_meta(ctx, "gamma", &out, false, &args).stage("gamma")?;
    println!("wrote {}x{} Gram matrix to {}", artifact.k, artifact.k, out.display());
    Ok(())
}
