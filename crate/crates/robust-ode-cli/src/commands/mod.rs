//! Subcommand implementations and shared CLI plumbing.

use std::path::{Path, PathBuf};

use robust_ode::evaluation::PipelineSettings;
use robust_ode::ode::{DesignCase, HeterogeneityLevel, SystemKind};
use robust_ode::smoothing::Kernel;
use robust_ode::{Error, Result};
use serde::Serialize;

pub mod bench;
pub mod evaluate;
pub mod fig1;
pub mod fit;
pub mod gamma;
pub mod infer;
pub mod loso;
pub mod pipeline;
pub mod simulate;
pub mod smooth;
pub mod weights;

/// Global flags resolved by `main`.
pub struct Context {
    pub out_dir: PathBuf,
    pub format: String,
    pub threads: usize,
}

impl Context {
    /// Resolve an output path against --out-dir.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out_dir.join(path)
        }
    }
}

/// An error tagged with the pipeline stage that raised it.
pub struct CliError {
    pub stage: &'static str,
    pub source: Error,
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError> {
        self.map_err(|source| CliError { stage, source })
    }
}

pub type CmdResult = std::result::Result<(), CliError>;

#[derive(Serialize)]
struct Meta<'a, T: Serialize> {
    artifact: &'static str,
    version: &'static str,
    command: &'a str,
    threads: usize,
    config: &'a T,
}

/// Every run records its resolved configuration; `target` is the output
/// file or directory the meta file sits next to (or inside).
pub fn write_meta<T: Serialize>(
    ctx: &Context,
    command: &str,
    target: &Path,
    target_is_dir: bool,
    config: &T,
) -> Result<()> {
    let meta = Meta {
        artifact: "robust-ode",
        version: env!("CARGO_PKG_VERSION"),
        command,
        threads: ctx.threads,
        config,
    };
    let path = if target_is_dir {
        target.join("meta.json")
    } else {
        let mut name = target
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        name.push_str(".meta.json");
        target.with_file_name(name)
    };
    robust_ode::io::write_json(&path, &meta)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn parse_example(s: &str) -> Result<SystemKind> {
    match s {
        "enzyme" => Ok(SystemKind::EnzymeNetwork),
        "lv" => Ok(SystemKind::LotkaVolterra),
        other => Err(Error::InvalidConfig(format!(
            "unknown example `{other}` (expected enzyme|lv)"
        ))),
    }
}

pub fn parse_case(s: &str) -> Result<DesignCase> {
    match s {
        "stable" => Ok(DesignCase::Stable),
        "unstable" => Ok(DesignCase::Unstable),
        other => Err(Error::InvalidConfig(format!(
            "unknown case `{other}` (expected stable|unstable)"
        ))),
    }
}

pub fn parse_kernel(s: &str) -> Result<Kernel> {
    match s {
        "epanechnikov" => Ok(Kernel::Epanechnikov),
        "gaussian" => Ok(Kernel::Gaussian),
        other => Err(Error::InvalidConfig(format!(
            "unknown kernel `{other}` (expected epanechnikov|gaussian)"
        ))),
    }
}

pub fn parse_level(s: &str) -> Result<HeterogeneityLevel> {
    HeterogeneityLevel::parse(s)
}

/// Smoothing/tolerance flags shared by the estimation commands.
#[derive(clap::Args, Serialize, Clone)]
pub struct EstimationOpts {
    /// Fixed smoothing bandwidth in data time units (omit for CV selection)
    #[arg(long)]
    pub h: Option<f64>,
    /// Local polynomial order (1..=3)
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Local polynomial kernel
    #[arg(long, value_parser = ["epanechnikov", "gaussian"], default_value = "gaussian")]
    pub kernel: String,
    /// Undersmoothing factor applied to CV bandwidths
    #[arg(long, default_value_t = 0.7)]
    pub undersmooth: f64,
    /// Standard-error bandwidth as a multiple of the smoothing bandwidth
    #[arg(long, default_value_t = 5.0)]
    pub se_factor: f64,
    /// Boundary trim of the Gram quadrature
    #[arg(long, default_value_t = 0.05)]
    pub trim: f64,
    /// Tolerance constant C_d of the adaptive rule
    #[arg(long, default_value_t = 0.01)]
    pub cd: f64,
}

impl EstimationOpts {
    pub fn settings(&self) -> Result<PipelineSettings> {
        Ok(PipelineSettings {
            order: self.order,
            kernel: parse_kernel(&self.kernel)?,
            undersmooth: self.undersmooth,
            bandwidth: self.h,
            se_bandwidth_factor: self.se_factor,
            c_d: self.cd,
            trim: self.trim,
            ..PipelineSettings::default()
        })
    }
}
