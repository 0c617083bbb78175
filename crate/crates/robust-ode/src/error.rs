//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by simulation, smoothing, optimization, and I/O stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state contains a non-finite component at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("degenerate denominator {value:.3e} in dynamics term {term}")]
    DegenerateDenominator { term: &'static str, value: f64 },

    #[error("unknown heterogeneity level `{0}`")]
    UnknownLevel(String),

    #[error("trajectory blew up at t = {t}: |state| = {magnitude:.3e} exceeds 1e8")]
    BlowUp { t: f64, magnitude: f64 },

    #[error("local polynomial fit is singular at t = {t} after {widenings} bandwidth widenings")]
    SingularLocalFit { t: f64, widenings: usize },

    #[error("no observation receives positive kernel weight at t = {t}")]
    EmptyWindow { t: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("solver hit the iteration cap ({iterations}) with duality gap {gap:.3e}")]
    MaxIterations {
        iterations: usize,
        gap: f64,
        last_iterate: Vec<f64>,
    },

    #[error("bisection stalled with constraint residual {residual:.3e}; best feasible iterate returned in diagnostics")]
    BisectionStall {
        residual: f64,
        best_feasible: Vec<f64>,
    },

    #[error("Gram matrix has zero operator norm; tolerance ratio is undefined")]
    ZeroGamma,

    #[error("regularized kernel system is numerically singular (pivot {pivot:.3e} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("derivative energy is zero; normalized loss is undefined")]
    ZeroDenominator,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("header mismatch in {path}: {detail}")]
    HeaderMismatch { path: String, detail: String },

    #[error("non-monotone time in {path} at row {row}")]
    NonMonotoneTime { path: String, row: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error in {path}: {detail}")]
    Csv { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed input or configuration rather
    /// than by a numerical failure; the CLI maps these to exit code 2.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownLevel(_)
                | Error::GridMismatch(_)
                | Error::LengthMismatch { .. }
                | Error::HeaderMismatch { .. }
                | Error::NonMonotoneTime { .. }
                | Error::InvalidConfig(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Csv { .. }
        )
    }
}
