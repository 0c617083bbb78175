//! The robust aggregated trajectory and its pointwise confidence band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::rng::norm_quantile;
use crate::smoothing::SmoothedSource;
use crate::weights::SimplexWeights;

/// Weighted-average trajectory, derivative, and standard error across
/// sources, with the scaling information the confidence band needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustTrajectory {
    /// m x p weighted trajectory
    pub x_robust: Mat,
    /// m x p weighted derivative
    pub d_robust: Mat,
    /// m x p combined standard error, sqrt(sum_k w_k^2 sigma_k^2)
    pub sigma_robust: Mat,
    pub eval_grid: TimeGrid,
    pub weights: SimplexWeights,
    /// nominal miscoverage level recorded with the trajectory
    pub alpha: f64,
    /// observation count of the first source (common in simulation designs)
    pub n_obs: usize,
    /// standardized inference bandwidth of the first source
    pub h_std: f64,
    /// true when every source shares (n, h); the band then uses the combined
    /// sigma verbatim
    pub common_design: bool,
    /// sqrt(sum_k w_k^2 sigma_k^2 / (n_k h_k)): the band's standard error
    /// with per-source scaling, for unequal designs
    scaled_sigma: Mat,
    /// evaluation points within a bandwidth of any contributing source's
    /// observation boundary
    pub boundary: Vec<bool>,
}

/// Pointwise confidence band, `lower <= estimate <= upper` entrywise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub lower: Mat,
    pub upper: Mat,
    pub alpha: f64,
    pub z: f64,
}

/// Weighted aggregation of smoothed sources sharing an evaluation grid.
pub fn aggregate(smoothed: &[SmoothedSource], weights: &SimplexWeights) -> Result<RobustTrajectory> {
    if smoothed.is_empty() {
        return Err(Error::InvalidConfig("no sources to aggregate".into()));
    }
    if smoothed.len() != weights.omega.len() {
        return Err(Error::LengthMismatch {
            left: smoothed.len(),
            right: weights.omega.len(),
        });
    }
    let grid = &smoothed[0].eval_grid;
    let p = smoothed[0].dim();
    for s in smoothed {
        if !s.eval_grid.approx_eq(grid, 1e-12) {
            return Err(Error::GridMismatch(
                "sources must share the evaluation grid".into(),
            ));
        }
        if s.dim() != p {
            return Err(Error::GridMismatch(
                "sources disagree on signal dimension".into(),
            ));
        }
    }
    let m = grid.len();
    let mut x = Mat::zeros(m, p);
    let mut d = Mat::zeros(m, p);
    let mut scaled_sigma = Mat::zeros(m, p);
    for i in 0..m {
        for j in 0..p {
            let mut xs = 0.0;
            let mut ds = 0.0;
            let mut var_scaled = 0.0;
            for (s, &w) in smoothed.iter().zip(&weights.omega) {
                xs += w * s.x_hat.get(i, j);
                ds += w * s.d_hat.get(i, j);
                let sig = s.sigma_hat.get(i, j);
                var_scaled += w * w * sig * sig / (s.n_obs as f64 * s.h_std());
            }
            x.set(i, j, xs);
            d.set(i, j, ds);
            scaled_sigma.set(i, j, var_scaled.sqrt());
        }
    }
    let sigmas: Vec<&Mat> = smoothed.iter().map(|s| &s.sigma_hat).collect();
    let sigma = robust_sigma(&sigmas, &weights.omega)?;

    // boundary applies where any source carrying weight is boundary-flagged
    let boundary: Vec<bool> = (0..m)
        .map(|i| {
            smoothed
                .iter()
                .zip(&weights.omega)
                .any(|(s, &w)| w > 1e-12 && s.boundary[i])
        })
        .collect();
    let n0 = smoothed[0].n_obs;
    let h0 = smoothed[0].h_std();
    let common_design = smoothed
        .iter()
        .all(|s| s.n_obs == n0 && s.h_std() == h0);
    Ok(RobustTrajectory {
        x_robust: x,
        d_robust: d,
        sigma_robust: sigma,
        eval_grid: grid.clone(),
        weights: weights.clone(),
        alpha: 0.05,
        n_obs: n0,
        h_std: h0,
        common_design,
        scaled_sigma,
        boundary,
    })
}

/// Combined standard error `sqrt(sum_k w_k^2 sigma_k^2)` entrywise;
/// cross-covariances are dropped since sources are independent.
pub fn robust_sigma(sigmas: &[&Mat], omega: &[f64]) -> Result<Mat> {
    if sigmas.len() != omega.len() {
        return Err(Error::LengthMismatch {
            left: sigmas.len(),
            right: omega.len(),
        });
    }
    let m = sigmas[0].rows();
    let p = sigmas[0].cols();
    let mut out = Mat::zeros(m, p);
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for (s, &w) in sigmas.iter().zip(omega) {
                let v = s.get(i, j);
                acc += w * w * v * v;
            }
            out.set(i, j, acc.sqrt());
        }
    }
    Ok(out)
}

/// Pointwise band `Xhat +- z_(1-alpha/2) sigma_robust / sqrt(n h)`. When the
/// sources' designs differ, each source's variance is scaled by its own
/// `n_k h_k` instead; that reduces to the common formula when they agree.
pub fn confidence_band(traj: &RobustTrajectory, alpha: f64) -> Result<ConfidenceBand> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let z = norm_quantile(1.0 - alpha / 2.0);
    let m = traj.x_robust.rows();
    let p = traj.x_robust.cols();
    let scale = (traj.n_obs as f64 * traj.h_std).sqrt();
    let mut lower = Mat::zeros(m, p);
    let mut upper = Mat::zeros(m, p);
    for i in 0..m {
        for j in 0..p {
            let hw = if traj.common_design {
                z * traj.sigma_robust.get(i, j) / scale
            } else {
                z * traj.scaled_sigma.get(i, j)
            };
            let c = traj.x_robust.get(i, j);
            lower.set(i, j, c - hw);
            upper.set(i, j, c + hw);
        }
    }
    Ok(ConfidenceBand {
        lower,
        upper,
        alpha,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::{smooth_source, SmoothingConfig};
    use crate::weights::{SimplexWeights, SolveDiagnostics, WeightMethod};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn weights_of(omega: Vec<f64>) -> SimplexWeights {
        SimplexWeights {
            omega,
            objective: 0.0,
            method: WeightMethod::Oracle,
            d_n: None,
            lambda: None,
            diagnostics: SolveDiagnostics::default(),
        }
    }

    fn toy_smoothed(slope: f64, grid: &TimeGrid) -> SmoothedSource {
        let mut y = Mat::zeros(grid.len(), 1);
        for (i, &t) in grid.times().iter().enumerate() {
            y.set(i, 0, slope * t);
        }
        smooth_source(&y, grid, grid, &SmoothingConfig::with_bandwidth(0.4)).unwrap()
    }

    #[test]
    fn single_source_aggregation_is_identity() {
        let grid = TimeGrid::uniform(20, 2.0).unwrap();
        let s = toy_smoothed(1.5, &grid);
        let traj = aggregate(std::slice::from_ref(&s), &weights_of(vec![1.0])).unwrap();
        assert_eq!(traj.x_robust, s.x_hat);
        assert_eq!(traj.d_robust, s.d_hat);
    }

    #[test]
    fn equal_weights_on_identical_sources_reproduce_them() {
        let grid = TimeGrid::uniform(20, 2.0).unwrap();
        let s = toy_smoothed(0.7, &grid);
        let traj = aggregate(&[s.clone(), s.clone()], &weights_of(vec![0.5, 0.5])).unwrap();
        assert!(traj.x_robust.max_abs_diff(&s.x_hat) < 1e-14);
    }

    #[test]
    fn vertex_weights_select_one_source() {
        let grid = TimeGrid::uniform(20, 2.0).unwrap();
        let a = toy_smoothed(0.7, &grid);
        let b = toy_smoothed(-1.2, &grid);
        let traj = aggregate(&[a.clone(), b], &weights_of(vec![1.0, 0.0])).unwrap();
        assert!(traj.x_robust.max_abs_diff(&a.x_hat) < 1e-14);
        assert!(traj.sigma_robust.max_abs_diff(&a.sigma_hat) < 1e-12);
    }

    #[test]
    fn robust_sigma_matches_hand_values_and_is_homogeneous() {
        let mut s1 = Mat::zeros(1, 1);
        s1.set(0, 0, 1.0);
        let s2 = s1.clone();
        let out = robust_sigma(&[&s1, &s2], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(out.get(0, 0), 0.7071067811865476, epsilon = 1e-10);

        let mut a = Mat::zeros(1, 1);
        a.set(0, 0, 1.0);
        let mut b = Mat::zeros(1, 1);
        b.set(0, 0, 2.0);
        let base = robust_sigma(&[&a, &b], &[0.3, 0.7]).unwrap();
        let mut a3 = Mat::zeros(1, 1);
        a3.set(0, 0, 3.0);
        let mut b3 = Mat::zeros(1, 1);
        b3.set(0, 0, 6.0);
        let scaled = robust_sigma(&[&a3, &b3], &[0.3, 0.7]).unwrap();
        assert_relative_eq!(scaled.get(0, 0), 3.0 * base.get(0, 0), epsilon = 1e-12);
    }

    #[test]
    fn band_width_identity_holds_exactly() {
        let grid = TimeGrid::uniform(40, 2.0).unwrap();
        let s = toy_smoothed(1.0, &grid);
        let mut traj = aggregate(std::slice::from_ref(&s), &weights_of(vec![1.0])).unwrap();
        // plant a known sigma field to exercise the identity
        for i in 0..traj.sigma_robust.rows() {
            traj.sigma_robust.set(i, 0, 0.1);
        }
        let band = confidence_band(&traj, 0.05).unwrap();
        assert_relative_eq!(band.z, 1.959963984540054, epsilon = 1e-8);
        let n = traj.n_obs as f64;
        let h = traj.h_std;
        for i in 0..40 {
            let width = band.upper.get(i, 0) - band.lower.get(i, 0);
            let expected = 2.0 * (band.z * traj.sigma_robust.get(i, 0) / (n * h).sqrt());
            assert_relative_eq!(width, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn half_width_arithmetic_matches_reference() {
        // n = 40, h = 0.25, sigma = 0.1, alpha = 0.05 -> 0.06198
        let z = norm_quantile(0.975);
        let hw = z * 0.1 / (40.0_f64 * 0.25).sqrt();
        assert_relative_eq!(hw, 0.061979503230456166, epsilon = 1e-9);
    }

    #[test]
    fn zero_sigma_collapses_the_band() {
        let grid = TimeGrid::uniform(10, 1.0).unwrap();
        let s = toy_smoothed(2.0, &grid);
        let traj = aggregate(std::slice::from_ref(&s), &weights_of(vec![1.0])).unwrap();
        // linear data smooths exactly: sigma is zero everywhere
        let band = confidence_band(&traj, 0.05).unwrap();
        for i in 0..10 {
            assert_abs_diff_eq!(
                band.upper.get(i, 0),
                band.lower.get(i, 0),
                epsilon = 1e-12
            );
            assert!(band.lower.get(i, 0) <= traj.x_robust.get(i, 0) + 1e-12);
        }
    }

    #[test]
    fn aggregation_is_linear_in_the_weights() {
        let grid = TimeGrid::uniform(15, 1.0).unwrap();
        let a = toy_smoothed(1.0, &grid);
        let b = toy_smoothed(-0.5, &grid);
        let sources = [a, b];
        let w1 = weights_of(vec![0.8, 0.2]);
        let w2 = weights_of(vec![0.3, 0.7]);
        let lam = 0.4;
        let mix = weights_of(vec![
            lam * 0.8 + (1.0 - lam) * 0.3,
            lam * 0.2 + (1.0 - lam) * 0.7,
        ]);
        let t1 = aggregate(&sources, &w1).unwrap();
        let t2 = aggregate(&sources, &w2).unwrap();
        let tm = aggregate(&sources, &mix).unwrap();
        for i in 0..15 {
            let want = lam * t1.x_robust.get(i, 0) + (1.0 - lam) * t2.x_robust.get(i, 0);
            assert_abs_diff_eq!(tm.x_robust.get(i, 0), want, epsilon = 1e-12);
        }
    }
}
