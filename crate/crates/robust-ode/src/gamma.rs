//! The K x K Gram matrix of estimated derivative trajectories and the
//! split-sample pair used for tolerance selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{psd_floor, sym_operator_norm, Mat};
use crate::ode::SourceObservations;
use crate::smoothing::{smooth_source, SmoothedSource, SmoothingConfig};

/// Symmetric Gram matrix of derivative inner products,
/// `G[k,k'] = sum_j int D Xhat_j^(k)(t) D Xhat_j^(k')(t) dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaMatrix {
    pub k: usize,
    /// row-major K x K entries
    pub entries: Vec<f64>,
    pub quad_rule: String,
    pub trim: f64,
    /// true when negative eigenvalues were clipped to zero
    pub psd_floored: bool,
    /// smallest eigenvalue before flooring
    pub min_eig_raw: f64,
}

impl GammaMatrix {
    pub fn from_entries(entries: Vec<f64>, k: usize, trim: f64) -> Result<Self> {
        if entries.len() != k * k {
            return Err(Error::LengthMismatch {
                left: entries.len(),
                right: k * k,
            });
        }
        Ok(Self {
            k,
            entries,
            quad_rule: "trapezoid".to_string(),
            trim,
            psd_floored: false,
            min_eig_raw: f64::NAN,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn operator_norm(&self) -> f64 {
        sym_operator_norm(&self.entries, self.k)
    }

    /// Operator norm of the difference with another matrix of equal size.
    pub fn operator_norm_diff(&self, other: &GammaMatrix) -> Result<f64> {
        if self.k != other.k {
            return Err(Error::LengthMismatch {
                left: self.k,
                right: other.k,
            });
        }
        let diff: Vec<f64> = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(sym_operator_norm(&diff, self.k))
    }

    /// Copy with negative eigenvalues clipped to zero.
    pub fn floored(&self) -> GammaMatrix {
        let (entries, min_eig) = psd_floor(&self.entries, self.k);
        GammaMatrix {
            k: self.k,
            entries,
            quad_rule: self.quad_rule.clone(),
            trim: self.trim,
            psd_floored: true,
            min_eig_raw: min_eig,
        }
    }
}

/// Trapezoid weights restricted to the trimmed window
/// `[t0 + trim*span, t0 + (1-trim)*span]`; zero outside.
fn trapezoid_weights(grid: &TimeGrid, trim: f64) -> Result<Vec<f64>> {
    if !(0.0..0.25).contains(&trim) {
        return Err(Error::InvalidConfig(format!(
            "trim must lie in [0, 0.25), got {trim}"
        )));
    }
    let times = grid.times();
    let lo = grid.first() + trim * grid.span();
    let hi = grid.first() + (1.0 - trim) * grid.span();
    let tol = 1e-12 * grid.span();
    let idx: Vec<usize> = (0..times.len())
        .filter(|&i| times[i] >= lo - tol && times[i] <= hi + tol)
        .collect();
    if idx.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "trimmed window keeps only {} grid points",
            idx.len()
        )));
    }
    let mut w = vec![0.0; times.len()];
    for pair in idx.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (times[b] - times[a]);
        w[a] += half;
        w[b] += half;
    }
    Ok(w)
}

/// Gram matrix of raw derivative curves sharing one grid (used both for
/// estimates and for oracle matrices built from latent derivatives).
pub fn gamma_from_derivatives(derivs: &[&Mat], grid: &TimeGrid, trim: f64) -> Result<GammaMatrix> {
    let k = derivs.len();
    if k == 0 {
        return Err(Error::InvalidConfig("no sources".into()));
    }
    let n = grid.len();
    let p = derivs[0].cols();
    for d in derivs {
        if d.rows() != n || d.cols() != p {
            return Err(Error::GridMismatch(
                "derivative arrays disagree with the grid".into(),
            ));
        }
    }
    let w = trapezoid_weights(grid, trim)?;
    let mut entries = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let mut acc = 0.0;
            for i in 0..n {
                if w[i] == 0.0 {
                    continue;
                }
                let mut dot = 0.0;
                for j in 0..p {
                    dot += derivs[a].get(i, j) * derivs[b].get(i, j);
                }
                acc += w[i] * dot;
            }
            entries[a * k + b] = acc;
            entries[b * k + a] = acc;
        }
    }
    let mut g = GammaMatrix::from_entries(entries, k, trim)?;
    let (_, min_eig) = psd_floor(&g.entries, k);
    g.min_eig_raw = min_eig;
    Ok(g)
}

/// Gram matrix of smoothed derivative estimates. All sources must share the
/// evaluation grid.
pub fn estimate_gamma(smoothed: &[SmoothedSource], trim: f64) -> Result<GammaMatrix> {
    if smoothed.is_empty() {
        return Err(Error::InvalidConfig("no sources".into()));
    }
    let grid = &smoothed[0].eval_grid;
    for s in smoothed {
        if !s.eval_grid.approx_eq(grid, 1e-12) {
            return Err(Error::GridMismatch(
                "smoothed sources use different evaluation grids".into(),
            ));
        }
    }
    let derivs: Vec<&Mat> = smoothed.iter().map(|s| &s.d_hat).collect();
    gamma_from_derivatives(&derivs, grid, trim)
}

/// Interleaved index split: odd observation positions (1st, 3rd, ...) and
/// even positions, so both halves cover the full window.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..n).step_by(2).collect(), (1..n).step_by(2).collect())
}

/// Split-sample Gram pair: observations are partitioned by odd/even time
/// positions, each half is smoothed independently onto one shared evaluation
/// grid (the full observation grid unless `eval_grid` overrides it), and
/// both halves go through the same quadrature.
pub fn split_gamma(
    obs: &SourceObservations,
    config: &SmoothingConfig,
    trim: f64,
    eval_grid: Option<&TimeGrid>,
) -> Result<(GammaMatrix, GammaMatrix)> {
    let shared = obs.shared_grid().ok_or_else(|| {
        Error::GridMismatch("split-sample tolerance needs a shared observation grid".into())
    })?;
    let n = shared.len();
    if n < 16 {
        return Err(Error::InvalidConfig(format!(
            "sample splitting needs n >= 16, got {n}"
        )));
    }
    let grid = eval_grid.unwrap_or(shared).clone();
    let shared = shared.clone();
    let (idx1, idx2) = split_indices(n);
    let mut halves: Vec<Vec<SmoothedSource>> = vec![Vec::new(), Vec::new()];
    for source in &obs.sources {
        for (slot, idx) in [&idx1, &idx2].into_iter().enumerate() {
            let sub = shared.subgrid(idx)?;
            let mut y = Mat::zeros(idx.len(), source.y.cols());
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..source.y.cols() {
                    y.set(r, j, source.y.get(i, j));
                }
            }
            halves[slot].push(smooth_source(&y, &sub, &grid, config)?);
        }
    }
    Ok((
        estimate_gamma(&halves[0], trim)?,
        estimate_gamma(&halves[1], trim)?,
    ))
}
