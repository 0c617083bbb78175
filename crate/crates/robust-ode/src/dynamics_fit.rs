//! Gradient-matching fit of the link function: Gaussian-kernel ridge
//! regression of estimated derivatives on estimated states, plus the pooled
//! ERM baseline. Targets are centered per output dimension, so predictions
//! are exactly translation-linear in the targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_apply, cholesky_factor, Mat};
use crate::smoothing::SmoothedSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Gaussian kernel length scale; defaults to the RMS spread of the
    /// feature points around their centroid.
    pub bandwidth: Option<f64>,
    /// absolute ridge added to the kernel matrix; defaults to 1e-4 * m
    pub ridge: Option<f64>,
    /// append time (scaled to [0, 1]) as an extra input coordinate
    pub include_time: bool,
    /// deterministic stride subsampling cap on the center count
    pub max_centers: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bandwidth: None,
            ridge: None,
            include_time: false,
            max_centers: 2000,
        }
    }
}

/// Kernel-expansion representation of the fitted link function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDynamics {
    /// m x d feature centers (state coordinates, plus scaled time when used)
    pub centers: Mat,
    /// m x p dual coefficients
    pub coefficients: Mat,
    /// per-dimension target means absorbed before the ridge solve
    pub target_means: Vec<f64>,
    pub kernel_bandwidth: f64,
    pub ridge: f64,
    pub include_time: bool,
    /// divisor mapping raw time onto the extra coordinate
    pub time_scale: f64,
}

fn feature_row(x: &[f64], t: f64, include_time: bool, time_scale: f64) -> Vec<f64> {
    let mut f = x.to_vec();
    if include_time {
        f.push(t / time_scale);
    }
    f
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Default kernel length scale: the root-mean-square distance of feature
/// points to their centroid. Trajectory clouds concentrate near equilibria,
/// which drives median pairwise distances to zero; the RMS spread tracks
/// the cloud's overall extent instead.
fn rms_spread(feats: &[Vec<f64>]) -> f64 {
    let m = feats.len();
    let d = feats[0].len();
    let mut centroid = vec![0.0; d];
    for f in feats {
        for (c, v) in centroid.iter_mut().zip(f) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= m as f64;
    }
    let mean_sq = feats
        .iter()
        .map(|f| sq_dist(f, &centroid))
        .sum::<f64>()
        / m as f64;
    let spread = mean_sq.sqrt();
    if spread > 0.0 {
        spread
    } else {
        1.0
    }
}

/// Fit kernel ridge regressions of each derivative coordinate on the state
/// (and optionally time).
pub fn fit_gradient_matching(
    states: &Mat,
    derivs: &Mat,
    times: &[f64],
    opts: &FitOptions,
) -> Result<FittedDynamics> {
    let m_all = states.rows();
    if m_all < 2 {
        return Err(Error::InvalidConfig(format!(
            "gradient matching needs at least 2 samples, got {m_all}"
        )));
    }
    if derivs.rows() != m_all || times.len() != m_all {
        return Err(Error::LengthMismatch {
            left: derivs.rows(),
            right: m_all,
        });
    }
    let p = derivs.cols();
    let keep: Vec<usize> = if m_all > opts.max_centers {
        let stride = m_all as f64 / opts.max_centers as f64;
        (0..opts.max_centers)
            .map(|i| ((i as f64 * stride) as usize).min(m_all - 1))
            .collect()
    } else {
        (0..m_all).collect()
    };
    let m = keep.len();
    let time_scale = times
        .iter()
        .fold(0.0_f64, |acc, &t| acc.max(t.abs()))
        .max(1e-300);
    let feats: Vec<Vec<f64>> = keep
        .iter()
        .map(|&i| feature_row(states.row(i), times[i], opts.include_time, time_scale))
        .collect();
    let bandwidth = match opts.bandwidth {
        Some(b) if b > 0.0 => b,
        Some(b) => {
            return Err(Error::InvalidConfig(format!(
                "kernel bandwidth must be positive, got {b}"
            )))
        }
        None => rms_spread(&feats),
    };
    let ridge = match opts.ridge {
        Some(r) if r >= 0.0 => r,
        Some(r) => {
            return Err(Error::InvalidConfig(format!(
                "ridge must be >= 0, got {r}"
            )))
        }
        None => 1e-4 * m as f64,
    };

    let inv_two_b2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        gram[i * m + i] = 1.0 + ridge;
        for j in (i + 1)..m {
            let kij = (-sq_dist(&feats[i], &feats[j]) * inv_two_b2).exp();
            gram[i * m + j] = kij;
            gram[j * m + i] = kij;
        }
    }
    cholesky_factor(&mut gram, m)?;

    let mut target_means = vec![0.0; p];
    let mut coefficients = Mat::zeros(m, p);
    for j in 0..p {
        let mean = keep.iter().map(|&i| derivs.get(i, j)).sum::<f64>() / m as f64;
        target_means[j] = mean;
        let mut rhs: Vec<f64> = keep.iter().map(|&i| derivs.get(i, j) - mean).collect();
        cholesky_apply(&gram, m, &mut rhs);
        for (r, c) in rhs.into_iter().enumerate() {
            coefficients.set(r, j, c);
        }
    }
    let mut centers = Mat::zeros(m, feats[0].len());
    for (r, f) in feats.iter().enumerate() {
        for (c, v) in f.iter().enumerate() {
            centers.set(r, c, *v);
        }
    }
    Ok(FittedDynamics {
        centers,
        coefficients,
        target_means,
        kernel_bandwidth: bandwidth,
        ridge,
        include_time: opts.include_time,
        time_scale,
    })
}

/// Evaluate the fitted link function at state `x` and time `t`.
pub fn predict_derivative(fit: &FittedDynamics, x: &[f64], t: f64) -> Vec<f64> {
    let feat = feature_row(x, t, fit.include_time, fit.time_scale);
    let m = fit.centers.rows();
    let p = fit.coefficients.cols();
    let inv_two_b2 = 1.0 / (2.0 * fit.kernel_bandwidth * fit.kernel_bandwidth);
    let mut out = fit.target_means.clone();
    for i in 0..m {
        let k = (-sq_dist(&feat, fit.centers.row(i)) * inv_two_b2).exp();
        for (j, o) in out.iter_mut().enumerate().take(p) {
            *o += k * fit.coefficients.get(i, j);
        }
    }
    out
}

/// Keep evaluation points inside the trimmed window
/// `[first + trim*span, last - trim*span]` (the same window the Gram
/// quadrature uses; edge derivative estimates stay out of the fits).
pub fn trim_mask(grid: &crate::grid::TimeGrid, trim: f64) -> Vec<bool> {
    let lo = grid.first() + trim * grid.span();
    let hi = grid.first() + (1.0 - trim) * grid.span();
    let tol = 1e-12 * grid.span();
    grid.times()
        .iter()
        .map(|&t| t >= lo - tol && t <= hi + tol)
        .collect()
}

/// Rows of (state, time, derivative) pooled across sources, keeping the
/// trimmed window.
pub fn pooled_interior(sources: &[SmoothedSource], trim: f64) -> Result<(Mat, Mat, Vec<f64>)> {
    if sources.is_empty() {
        return Err(Error::InvalidConfig("no sources to pool".into()));
    }
    let p = sources[0].dim();
    let mut states = Vec::new();
    let mut derivs = Vec::new();
    let mut times = Vec::new();
    for s in sources {
        if s.dim() != p {
            return Err(Error::GridMismatch(
                "sources disagree on signal dimension".into(),
            ));
        }
        let keep = trim_mask(&s.eval_grid, trim);
        for (i, &t) in s.eval_grid.times().iter().enumerate() {
            if !keep[i] {
                continue;
            }
            states.push(s.x_hat.row(i).to_vec());
            derivs.push(s.d_hat.row(i).to_vec());
            times.push(t);
        }
    }
    if states.len() < 2 {
        return Err(Error::InvalidConfig(
            "too few interior points after trimming".into(),
        ));
    }
    Ok((Mat::from_rows(states)?, Mat::from_rows(derivs)?, times))
}

/// ERM baseline: one gradient-matching fit on the union of all sources'
/// (state, time, derivative) triples over the trimmed window.
pub fn fit_erm(sources: &[SmoothedSource], trim: f64, opts: &FitOptions) -> Result<FittedDynamics> {
    let (states, derivs, times) = pooled_interior(sources, trim)?;
    fit_gradient_matching(&states, &derivs, &times, opts)
}

/// Five-fold CV over bandwidth multipliers (on the median-distance default)
/// and ridge multipliers; returns the selected (bandwidth, ridge).
pub fn cv_select(
    states: &Mat,
    derivs: &Mat,
    times: &[f64],
    opts: &FitOptions,
    bandwidth_mults: &[f64],
    ridge_mults: &[f64],
) -> Result<(f64, f64)> {
    let m = states.rows();
    if m < 10 {
        return Err(Error::InvalidConfig("CV needs at least 10 samples".into()));
    }
    let feats: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            feature_row(
                states.row(i),
                times[i],
                opts.include_time,
                times.iter().fold(1e-300_f64, |a, &t| a.max(t.abs())),
            )
        })
        .collect();
    let base_bw = rms_spread(&feats);
    let base_ridge = 1e-4;
    let folds = 5usize;
    let mut best = (f64::INFINITY, base_bw, base_ridge * m as f64);
    for &bm in bandwidth_mults {
        for &rm in ridge_mults {
            let mut sse = 0.0;
            let mut count = 0usize;
            for fold in 0..folds {
                let train: Vec<usize> = (0..m).filter(|i| i % folds != fold).collect();
                let test: Vec<usize> = (0..m).filter(|i| i % folds == fold).collect();
                let tr_states = Mat::from_rows(train.iter().map(|&i| states.row(i).to_vec()).collect())?;
                let tr_derivs = Mat::from_rows(train.iter().map(|&i| derivs.row(i).to_vec()).collect())?;
                let tr_times: Vec<f64> = train.iter().map(|&i| times[i]).collect();
                let fit = fit_gradient_matching(
                    &tr_states,
                    &tr_derivs,
                    &tr_times,
                    &FitOptions {
                        bandwidth: Some(base_bw * bm),
                        ridge: Some(base_ridge * rm * train.len() as f64),
                        ..*opts
                    },
                )?;
                for &i in &test {
                    let pred = predict_derivative(&fit, states.row(i), times[i]);
                    for j in 0..derivs.cols() {
                        let r = pred[j] - derivs.get(i, j);
                        sse += r * r;
                    }
                    count += 1;
                }
            }
            let score = sse / count as f64;
            if score < best.0 {
                best = (score, base_bw * bm, base_ridge * rm * m as f64);
            }
        }
    }
    Ok((best.1, best.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn toy_data(m: usize) -> (Mat, Mat, Vec<f64>) {
        let mut states = Vec::new();
        let mut derivs = Vec::new();
        let mut times = Vec::new();
        for i in 0..m {
            let t = i as f64 / (m - 1) as f64;
            states.push(vec![t, (2.0 * t).sin()]);
            derivs.push(vec![1.0 - t, 0.5 * t]);
            times.push(t);
        }
        (
            Mat::from_rows(states).unwrap(),
            Mat::from_rows(derivs).unwrap(),
            times,
        )
    }

    #[test]
    fn zero_targets_predict_zero() {
        let (states, _, times) = toy_data(20);
        let derivs = Mat::zeros(20, 2);
        let fit = fit_gradient_matching(&states, &derivs, &times, &FitOptions::default()).unwrap();
        let pred = predict_derivative(&fit, &[0.4, 0.6], 0.4);
        assert_abs_diff_eq!(pred[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_ridge_interpolates_training_points() {
        let (states, derivs, times) = toy_data(15);
        let fit = fit_gradient_matching(
            &states,
            &derivs,
            &times,
            &FitOptions {
                ridge: Some(1e-10),
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..15 {
            let pred = predict_derivative(&fit, states.row(i), times[i]);
            for j in 0..2 {
                assert_abs_diff_eq!(pred[j], derivs.get(i, j), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn shifted_targets_shift_predictions() {
        let (states, derivs, times) = toy_data(18);
        let fit = fit_gradient_matching(&states, &derivs, &times, &FitOptions::default()).unwrap();
        let shift = [3.25, -1.5];
        let mut shifted = derivs.clone();
        for i in 0..18 {
            for j in 0..2 {
                shifted.set(i, j, derivs.get(i, j) + shift[j]);
            }
        }
        let fit_shifted =
            fit_gradient_matching(&states, &shifted, &times, &FitOptions::default()).unwrap();
        let q = [0.37, 0.81];
        let a = predict_derivative(&fit, &q, 0.37);
        let b = predict_derivative(&fit_shifted, &q, 0.37);
        for j in 0..2 {
            assert_abs_diff_eq!(b[j], a[j] + shift[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn predictions_scale_linearly_with_targets() {
        let (states, derivs, times) = toy_data(18);
        let fit = fit_gradient_matching(&states, &derivs, &times, &FitOptions::default()).unwrap();
        let mut scaled = derivs.clone();
        for i in 0..18 {
            for j in 0..2 {
                scaled.set(i, j, 4.0 * derivs.get(i, j));
            }
        }
        let fit_scaled =
            fit_gradient_matching(&states, &scaled, &times, &FitOptions::default()).unwrap();
        let q = [0.2, 0.9];
        let a = predict_derivative(&fit, &q, 0.2);
        let b = predict_derivative(&fit_scaled, &q, 0.2);
        for j in 0..2 {
            assert_relative_eq!(b[j], 4.0 * a[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn permuting_training_points_leaves_predictions_unchanged() {
        let (states, derivs, times) = toy_data(16);
        let fit = fit_gradient_matching(&states, &derivs, &times, &FitOptions::default()).unwrap();
        let perm: Vec<usize> = (0..16).rev().collect();
        let states_p = Mat::from_rows(perm.iter().map(|&i| states.row(i).to_vec()).collect()).unwrap();
        let derivs_p = Mat::from_rows(perm.iter().map(|&i| derivs.row(i).to_vec()).collect()).unwrap();
        let times_p: Vec<f64> = perm.iter().map(|&i| times[i]).collect();
        let fit_p =
            fit_gradient_matching(&states_p, &derivs_p, &times_p, &FitOptions::default()).unwrap();
        let q = [0.5, 0.1];
        let a = predict_derivative(&fit, &q, 0.5);
        let b = predict_derivative(&fit_p, &q, 0.5);
        for j in 0..2 {
            assert_abs_diff_eq!(a[j], b[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn duplicated_sample_with_rescaled_ridge_matches_single_fit() {
        let (states, derivs, times) = toy_data(12);
        let single = fit_gradient_matching(
            &states,
            &derivs,
            &times,
            &FitOptions {
                ridge: Some(0.01 * 12.0),
                ..Default::default()
            },
        )
        .unwrap();
        let mut rows_s = states.to_nested();
        rows_s.extend(states.to_nested());
        let mut rows_d = derivs.to_nested();
        rows_d.extend(derivs.to_nested());
        let mut times2 = times.clone();
        times2.extend(times.iter().copied());
        let doubled = fit_gradient_matching(
            &Mat::from_rows(rows_s).unwrap(),
            &Mat::from_rows(rows_d).unwrap(),
            &times2,
            &FitOptions {
                ridge: Some(0.01 * 24.0),
                bandwidth: Some(single.kernel_bandwidth),
                ..Default::default()
            },
        )
        .unwrap();
        let q = [0.45, 0.55];
        let a = predict_derivative(&single, &q, 0.45);
        let b = predict_derivative(&doubled, &q, 0.45);
        for j in 0..2 {
            assert_abs_diff_eq!(a[j], b[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn training_residual_grows_with_ridge() {
        let (states, derivs, times) = toy_data(20);
        let mut prev = -1.0;
        for ridge in [1e-8, 1e-4, 1e-2, 1.0, 100.0] {
            let fit = fit_gradient_matching(
                &states,
                &derivs,
                &times,
                &FitOptions {
                    ridge: Some(ridge),
                    ..Default::default()
                },
            )
            .unwrap();
            let mut sse = 0.0;
            for i in 0..20 {
                let pred = predict_derivative(&fit, states.row(i), times[i]);
                for j in 0..2 {
                    let r = pred[j] - derivs.get(i, j);
                    sse += r * r;
                }
            }
            assert!(
                sse >= prev - 1e-12,
                "residual {sse} fell below {prev} at ridge {ridge}"
            );
            prev = sse;
        }
    }

    #[test]
    fn recovers_linear_dynamics_out_of_sample() {
        // dX/dt = A X sampled along one trajectory; held-out derivative RMSE
        // should be well under 5% of the derivative RMS
        let a = [[-0.5, 0.2], [-0.3, -0.8]];
        let mut x = vec![1.0, -0.5];
        let dt = 0.01;
        let mut states = Vec::new();
        let mut derivs = Vec::new();
        let mut times = Vec::new();
        for i in 0..400 {
            let dx = [
                a[0][0] * x[0] + a[0][1] * x[1],
                a[1][0] * x[0] + a[1][1] * x[1],
            ];
            states.push(x.clone());
            derivs.push(dx.to_vec());
            times.push(i as f64 * dt);
            x[0] += dt * dx[0];
            x[1] += dt * dx[1];
        }
        let train: Vec<usize> = (0..400).filter(|i| i % 2 == 0).collect();
        let test: Vec<usize> = (0..400).filter(|i| i % 2 == 1).collect();
        let tr_states =
            Mat::from_rows(train.iter().map(|&i| states[i].clone()).collect()).unwrap();
        let tr_derivs =
            Mat::from_rows(train.iter().map(|&i| derivs[i].clone()).collect()).unwrap();
        let tr_times: Vec<f64> = train.iter().map(|&i| times[i]).collect();
        let fit =
            fit_gradient_matching(&tr_states, &tr_derivs, &tr_times, &FitOptions::default())
                .unwrap();
        let mut sse = 0.0;
        let mut energy = 0.0;
        for &i in &test {
            let pred = predict_derivative(&fit, &states[i], times[i]);
            for j in 0..2 {
                sse += (pred[j] - derivs[i][j]).powi(2);
                energy += derivs[i][j].powi(2);
            }
        }
        let rel = (sse / energy).sqrt();
        assert!(rel < 0.05, "held-out relative RMSE {rel}");
    }
}
