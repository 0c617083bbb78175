use std::path::PathBuf;

use robust_ode::io::{read_json, write_json, GammaArtifact};
use robust_ode::weights::{
    plug_in_weights, ridge_weights, select_tolerance, stabilized_weights, SimplexWeights,
    ToleranceConfig,
};
use robust_ode::Error;
use serde::Serialize;

use super::{CmdResult, Context, StageExt};

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// Gram matrix artifact produced by `gamma`
    #[arg(long, value_name = "JSON")]
    pub gamma: PathBuf,
    #[arg(long, value_parser = ["plugin", "ridge", "stable"], default_value = "stable")]
    pub method: String,
    /// Fixed tolerance (constraint units) for the stabilized method
    #[arg(long, conflicts_with = "auto_dn")]
    pub dn: Option<f64>,
    /// Select the tolerance from the artifact's split-sample halves
    #[arg(long)]
    pub auto_dn: bool,
    /// Tolerance constant for --auto-dn
    #[arg(long, default_value_t = 0.01)]
    pub cd: f64,
    /// Ridge penalty for --method ridge
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output JSON with the weights, objective, and diagnostics
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct WeightsArtifact {
    weights: SimplexWeights,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<ToleranceConfig>,
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let gamma_path = ctx.resolve(&args.gamma);
    let artifact: GammaArtifact = read_json(&gamma_path).stage("weights")?;
    let gamma = artifact.gamma().stage("weights")?;
    let mut tolerance = None;
    let weights = match args.method.as_str() {
        "plugin" => plug_in_weights(&gamma).stage("weights")?,
        "ridge" => {
            let lambda = args.lambda.ok_or_else(|| {
                Error::InvalidConfig("--method ridge needs --lambda".into())
            })
            .stage("weights")?;
            ridge_weights(&gamma, lambda).stage("weights")?
        }
        "stable" => {
            let d_n = if args.auto_dn {
                let (g1, g2, n) = artifact
                    .split()
                    .stage("weights")?
                    .ok_or_else(|| {
                        Error::InvalidConfig(
                            "--auto-dn needs a gamma artifact with split halves (run `gamma --raw`)"
                                .into(),
                        )
                    })
                    .stage("weights")?;
                let tol = select_tolerance(&g1, &g2, &gamma, n, args.cd).stage("weights")?;
                let abs = tol.absolute();
                tolerance = Some(tol);
                abs
            } else {
                args.dn.ok_or_else(|| {
                    Error::InvalidConfig("pass --dn <tolerance> or --auto-dn".into())
                })
                .stage("weights")?
            };
            stabilized_weights(&gamma, d_n).stage("weights")?
        }
        other => {
            return Err(Error::InvalidConfig(format!("unknown method `{other}`")))
                .stage("weights")
        }
    };
    let out = ctx.resolve(&args.out);
    write_json(&out, &WeightsArtifact { weights, tolerance }).stage("weights")?;
    super::write_meta(ctx, "weights", &out, false, &args).stage("weights")?;
    println!("wrote {} weights to {}", args.method, out.display());
    Ok(())
}
