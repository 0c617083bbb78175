//! Loss metrics, benchmark replication harness, coverage experiments, and
//! the leave-one-subject-out protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics_fit::{
    fit_erm, fit_gradient_matching, predict_derivative, trim_mask, FitOptions, FittedDynamics,
};
use crate::error::{Error, Result};
use crate::gamma::{estimate_gamma, gamma_from_derivatives, split_gamma, split_indices, GammaMatrix};
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::ode::{
    generate_schedule_source, generate_sources, LatentSeries, SimulationConfig, SourceObservations,
    SourceSeries,
};
use crate::robust::{aggregate, confidence_band, RobustTrajectory};
use crate::smoothing::{
    inference_bandwidth, select_bandwidth, smooth_source, Kernel, SmoothedSource, SmoothingConfig,
};
use crate::weights::{
    plug_in_weights, ridge_weights, select_tolerance, stabilized_weights, SimplexWeights,
    ToleranceConfig, WeightMethod,
};

// ---------------------------------------------------------------------------
// Pipeline settings and the estimation pass
// ---------------------------------------------------------------------------

/// Settings shared by every estimation run: smoothing, tolerance, and the
/// link-function fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub order: usize,
    pub kernel: Kernel,
    /// CV bandwidths are multiplied by this before smoothing
    pub undersmooth: f64,
    /// fixed bandwidth in data time units; None selects by CV
    pub bandwidth: Option<f64>,
    /// standard-error bandwidth as a multiple of the smoothing bandwidth;
    /// a wider window stabilizes the plug-in noise estimate
    pub se_bandwidth_factor: f64,
    pub c_d: f64,
    /// boundary trim of the Gram quadrature
    pub trim: f64,
    /// window trim for link-function fitting; the local fits handle edges,
    /// so the default keeps the full window (the initial transient carries
    /// most of the dynamics information)
    pub fit_trim: f64,
    pub fit: FitOptions,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            order: 2,
            kernel: Kernel::Gaussian,
            undersmooth: 0.7,
            bandwidth: None,
            se_bandwidth_factor: 5.0,
            c_d: 0.01,
            trim: 0.05,
            fit_trim: 0.0,
            fit: FitOptions::default(),
        }
    }
}

impl PipelineSettings {
    pub fn smoothing_config(&self, h: f64) -> SmoothingConfig {
        SmoothingConfig {
            h,
            h_se: h * self.se_bandwidth_factor,
            order: self.order,
            kernel: self.kernel,
            undersmooth_factor: self.undersmooth,
        }
    }

    /// Final smoothing bandwidth: the undersmoothed CV choice.
    pub fn effective_bandwidth(&self, h_cv: f64) -> f64 {
        inference_bandwidth(h_cv, &self.smoothing_config(h_cv))
    }
}

/// One full estimation pass over a shared-grid observation set.
#[derive(Debug, Clone)]
pub struct EstimationOutput {
    pub smoothed: Vec<SmoothedSource>,
    pub gamma: GammaMatrix,
    pub tolerance: ToleranceConfig,
    pub weights: SimplexWeights,
    pub robust: RobustTrajectory,
    /// bandwidth actually used for smoothing (after undersmoothing)
    pub h_used: f64,
}

/// Median of per-(source, dimension) CV bandwidths; the single bandwidth
/// shared by the run.
pub fn shared_cv_bandwidth(obs: &SourceObservations, settings: &PipelineSettings) -> Result<f64> {
    let mut hs = Vec::new();
    let probe = settings.smoothing_config(1.0);
    for src in &obs.sources {
        let times = src.grid.times();
        for j in 0..src.y.cols() {
            let series = src.y.col(j);
            hs.push(select_bandwidth(times, &series, &probe)?);
        }
    }
    hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(hs[hs.len() / 2])
}

/// Smooth every source, estimate the Gram matrix, pick the tolerance from
/// the split-sample rule, solve the stabilized weights, and aggregate.
/// `eval_grid` defaults to the shared observation grid.
pub fn run_estimation(
    obs: &SourceObservations,
    settings: &PipelineSettings,
    eval_grid: Option<&TimeGrid>,
) -> Result<EstimationOutput> {
    let grid = obs
        .shared_grid()
        .ok_or_else(|| Error::GridMismatch("estimation needs a shared observation grid".into()))?
        .clone();
    let eval = eval_grid.unwrap_or(&grid).clone();
    let h = match settings.bandwidth {
        Some(h) => h,
        None => {
            let h_cv = shared_cv_bandwidth(obs, settings)?;
            settings.effective_bandwidth(h_cv)
        }
    };
    let config = settings.smoothing_config(h);
    let smoothed: Result<Vec<SmoothedSource>> = obs
        .sources
        .par_iter()
        .map(|src| smooth_source(&src.y, &src.grid, &eval, &config))
        .collect();
    let smoothed = smoothed?;
    let gamma = estimate_gamma(&smoothed, settings.trim)?;
    let (g1, g2) = split_gamma(obs, &config, settings.trim, Some(&eval))?;
    let tolerance = select_tolerance(&g1, &g2, &gamma, grid.len(), settings.c_d)?;
    let weights = stabilized_weights(&gamma, tolerance.absolute())?;
    let robust = aggregate(&smoothed, &weights)?;
    Ok(EstimationOutput {
        smoothed,
        gamma,
        tolerance,
        weights,
        robust,
        h_used: config.h,
    })
}

/// Stabilized weights from the latent derivative curves (simulation only):
/// the oracle Gram matrix with tolerance zero.
pub fn oracle_stabilized_weights(obs: &SourceObservations, trim: f64) -> Result<SimplexWeights> {
    let latent = obs
        .latent
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("oracle weights need latent derivatives".into()))?;
    let grid = obs
        .shared_grid()
        .ok_or_else(|| Error::GridMismatch("oracle weights need a shared grid".into()))?;
    let derivs: Vec<&Mat> = latent.iter().map(|l| &l.derivs).collect();
    let gamma = gamma_from_derivatives(&derivs, grid, trim)?;
    let mut w = stabilized_weights(&gamma, 0.0)?;
    w.method = WeightMethod::Oracle;
    Ok(w)
}

// ---------------------------------------------------------------------------
// Loss metrics
// ---------------------------------------------------------------------------

/// Trapezoid quadrature of the squared derivative residual,
/// `int sum_j (D X_j(t) - Fhat_j(X(t), t))^2 dt`.
pub fn trajectory_loss(
    fit: &FittedDynamics,
    states: &Mat,
    derivs: &Mat,
    grid: &TimeGrid,
) -> Result<f64> {
    let n = grid.len();
    if states.rows() != n || derivs.rows() != n {
        return Err(Error::GridMismatch(
            "latent arrays disagree with the grid".into(),
        ));
    }
    let times = grid.times();
    let sq = |i: usize| -> f64 {
        let pred = predict_derivative(fit, states.row(i), times[i]);
        pred.iter()
            .zip(derivs.row(i))
            .map(|(p, d)| (p - d) * (p - d))
            .sum()
    };
    let mut prev = sq(0);
    let mut acc = 0.0;
    for i in 1..n {
        let cur = sq(i);
        acc += 0.5 * (times[i] - times[i - 1]) * (prev + cur);
        prev = cur;
    }
    Ok(acc)
}

/// Derivative energy `int sum_j (D X_j)^2 dt` by the same quadrature.
pub fn derivative_energy(derivs: &Mat, grid: &TimeGrid) -> Result<f64> {
    let n = grid.len();
    if derivs.rows() != n {
        return Err(Error::GridMismatch(
            "derivative array disagrees with the grid".into(),
        ));
    }
    let times = grid.times();
    let sq = |i: usize| -> f64 { derivs.row(i).iter().map(|d| d * d).sum() };
    let mut prev = sq(0);
    let mut acc = 0.0;
    for i in 1..n {
        let cur = sq(i);
        acc += 0.5 * (times[i] - times[i - 1]) * (prev + cur);
        prev = cur;
    }
    Ok(acc)
}

/// Max/average/generalization losses of one fitted link function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub method: String,
    pub replication: u64,
    pub max_loss: f64,
    pub avg_loss: f64,
    pub gen_loss: f64,
    pub per_source: Vec<f64>,
}

pub fn loss_report(
    fit: &FittedDynamics,
    train_latent: &[LatentSeries],
    heldout: &LatentSeries,
    grid: &TimeGrid,
    replication: u64,
    method: &str,
) -> Result<LossReport> {
    let per_source: Result<Vec<f64>> = train_latent
        .iter()
        .map(|l| trajectory_loss(fit, &l.states, &l.derivs, grid))
        .collect();
    let per_source = per_source?;
    let max_loss = per_source.iter().fold(0.0_f64, |m, &v| m.max(v));
    let avg_loss = per_source.iter().sum::<f64>() / per_source.len() as f64;
    let gen_loss = trajectory_loss(fit, &heldout.states, &heldout.derivs, grid)?;
    Ok(LossReport {
        method: method.to_string(),
        replication,
        max_loss,
        avg_loss,
        gen_loss,
        per_source,
    })
}

/// Residual energy over derivative energy (both by trapezoid quadrature).
pub fn normalized_loss(
    fit: &FittedDynamics,
    states: &Mat,
    derivs: &Mat,
    grid: &TimeGrid,
) -> Result<f64> {
    let den = derivative_energy(derivs, grid)?;
    if den <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(trajectory_loss(fit, states, derivs, grid)? / den)
}

/// Fraction of trials where method A's loss is no greater than B's (ties
/// count as favorable).
pub fn pairwise_comparison(losses_a: &[f64], losses_b: &[f64]) -> Result<f64> {
    if losses_a.len() != losses_b.len() {
        return Err(Error::LengthMismatch {
            left: losses_a.len(),
            right: losses_b.len(),
        });
    }
    if losses_a.is_empty() {
        return Err(Error::InvalidConfig("no trials to compare".into()));
    }
    let fav = losses_a
        .iter()
        .zip(losses_b)
        .filter(|(a, b)| a <= b)
        .count();
    Ok(fav as f64 / losses_a.len() as f64)
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchMethod {
    Proposed,
    Erm,
    PlugIn,
    Ridge,
}

impl BenchMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "proposed" | "stable" => Ok(Self::Proposed),
            "erm" => Ok(Self::Erm),
            "plugin" => Ok(Self::PlugIn),
            "ridge" => Ok(Self::Ridge),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Erm => "erm",
            Self::PlugIn => "plugin",
            Self::Ridge => "ridge",
        }
    }
}

/// Rows of a robust trajectory inside the trimmed window, for fitting.
fn robust_interior(traj: &RobustTrajectory, trim: f64) -> Result<(Mat, Mat, Vec<f64>)> {
    let keep = trim_mask(&traj.eval_grid, trim);
    let mut states = Vec::new();
    let mut derivs = Vec::new();
    let mut times = Vec::new();
    for (i, &t) in traj.eval_grid.times().iter().enumerate() {
        if !keep[i] {
            continue;
        }
        states.push(traj.x_robust.row(i).to_vec());
        derivs.push(traj.d_robust.row(i).to_vec());
        times.push(t);
    }
    if states.len() < 2 {
        return Err(Error::InvalidConfig(
            "too few interior points after trimming".into(),
        ));
    }
    Ok((Mat::from_rows(states)?, Mat::from_rows(derivs)?, times))
}

/// Fit the link function for one benchmark method on an estimation pass.
pub fn fit_method(
    method: BenchMethod,
    est: &EstimationOutput,
    settings: &PipelineSettings,
) -> Result<FittedDynamics> {
    match method {
        BenchMethod::Erm => fit_erm(&est.smoothed, settings.fit_trim, &settings.fit),
        _ => {
            let weights = match method {
                BenchMethod::Proposed => est.weights.clone(),
                BenchMethod::PlugIn => plug_in_weights(&est.gamma)?,
                // the ridge penalty reuses the tolerance scale
                BenchMethod::Ridge => {
                    ridge_weights(&est.gamma, est.tolerance.absolute().max(1e-12))?
                }
                BenchMethod::Erm => unreachable!(),
            };
            let traj = aggregate(&est.smoothed, &weights)?;
            let (states, derivs, times) = robust_interior(&traj, settings.fit_trim)?;
            fit_gradient_matching(&states, &derivs, &times, &settings.fit)
        }
    }
}

/// Losses of each method on one seeded replication. The held-out source
/// follows the scheduled parameters with index K+1 in both design cases.
pub fn replication_losses(
    template: &SimulationConfig,
    replication: u64,
    methods: &[BenchMethod],
    settings: &PipelineSettings,
) -> Result<Vec<LossReport>> {
    let mut config = template.clone();
    config.seed = template.seed.wrapping_add(replication);
    let obs = generate_sources(&config)?;
    let (_, heldout) = generate_schedule_source(&config, config.sources + 1)?;
    let est = run_estimation(&obs, settings, None)?;
    let latent = obs.latent.as_ref().expect("simulated data retains latent");
    let grid = &config.grid;
    methods
        .iter()
        .map(|&m| {
            let fit = fit_method(m, &est, settings)?;
            loss_report(&fit, latent, &heldout, grid, replication, m.label())
        })
        .collect()
}

/// Replicated benchmark, parallel over replications, merged in replication
/// order.
pub fn benchmark(
    template: &SimulationConfig,
    replications: usize,
    methods: &[BenchMethod],
    settings: &PipelineSettings,
) -> Result<Vec<LossReport>> {
    let nested: Result<Vec<Vec<LossReport>>> = (0..replications as u64)
        .into_par_iter()
        .map(|rep| replication_losses(template, rep, methods, settings))
        .collect();
    Ok(nested?.into_iter().flatten().collect())
}

/// Mean and standard deviation of a slice.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Coverage experiment
// ---------------------------------------------------------------------------

/// Empirical coverage probability and mean interval length over
/// `(time, dimension, replication)` triples, interior points only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub ecp: f64,
    pub cil: f64,
    pub covered: usize,
    pub total: usize,
    pub replications: usize,
}

/// Coverage of the robust-trajectory band against the population target
/// `sum_k w*_k X_j^(k)(t)` with oracle stabilized weights from latent
/// derivatives. `sigma_floor` lower-bounds the combined standard error
/// (degenerate-noise sanity runs).
pub fn coverage_experiment(
    template: &SimulationConfig,
    replications: usize,
    alpha: f64,
    sigma_floor: Option<f64>,
    settings: &PipelineSettings,
) -> Result<CoverageReport> {
    let per_rep: Result<Vec<(usize, usize, f64)>> = (0..replications as u64)
        .into_par_iter()
        .map(|rep| -> Result<(usize, usize, f64)> {
            let mut config = template.clone();
            config.seed = template.seed.wrapping_add(rep);
            let obs = generate_sources(&config)?;
            let est = run_estimation(&obs, settings, None)?;
            let oracle = oracle_stabilized_weights(&obs, settings.trim)?;
            let latent = obs.latent.as_ref().expect("simulated data retains latent");
            let mut traj = est.robust;
            if let Some(floor) = sigma_floor {
                for i in 0..traj.sigma_robust.rows() {
                    for j in 0..traj.sigma_robust.cols() {
                        let v = traj.sigma_robust.get(i, j).max(floor);
                        traj.sigma_robust.set(i, j, v);
                    }
                }
            }
            let band = confidence_band(&traj, alpha)?;
            let p = traj.x_robust.cols();
            let mut covered = 0usize;
            let mut total = 0usize;
            let mut width_sum = 0.0;
            for i in 0..traj.x_robust.rows() {
                if traj.boundary[i] {
                    continue;
                }
                for j in 0..p {
                    let target: f64 = latent
                        .iter()
                        .zip(&oracle.omega)
                        .map(|(l, &w)| w * l.states.get(i, j))
                        .sum();
                    let lo = band.lower.get(i, j);
                    let hi = band.upper.get(i, j);
                    if lo <= target && target <= hi {
                        covered += 1;
                    }
                    total += 1;
                    width_sum += hi - lo;
                }
            }
            Ok((covered, total, width_sum))
        })
        .collect();
    let mut covered = 0usize;
    let mut total = 0usize;
    let mut width = 0.0;
    for (c, t, w) in per_rep? {
        covered += c;
        total += t;
        width += w;
    }
    if total == 0 {
        return Err(Error::InvalidConfig(
            "no interior points entered the coverage count".into(),
        ));
    }
    Ok(CoverageReport {
        ecp: covered as f64 / total as f64,
        cil: width / total as f64,
        covered,
        total,
        replications,
    })
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoOutcome {
    pub held_out: String,
    pub trials: usize,
    /// trials where the proposed method's normalized loss is no greater
    /// than the ERM baseline's
    pub favorable_vs_erm: usize,
    pub mean_normalized_proposed: f64,
    pub mean_normalized_erm: f64,
    pub weights: Vec<f64>,
}

fn cv_config_for(series: &SourceSeries, settings: &PipelineSettings) -> Result<SmoothingConfig> {
    let probe = settings.smoothing_config(1.0);
    let mut hs = Vec::new();
    for j in 0..series.y.cols() {
        let col = series.y.col(j);
        hs.push(select_bandwidth(series.grid.times(), &col, &probe)?);
    }
    hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h_cv = hs[hs.len() / 2];
    Ok(settings.smoothing_config(settings.effective_bandwidth(h_cv)))
}

fn half_series(series: &SourceSeries, indices: &[usize]) -> Result<(Mat, TimeGrid)> {
    let mut y = Mat::zeros(indices.len(), series.y.cols());
    for (r, &i) in indices.iter().enumerate() {
        for j in 0..series.y.cols() {
            y.set(r, j, series.y.get(i, j));
        }
    }
    Ok((y, series.grid.subgrid(indices)?))
}

/// Estimation over external subjects whose grids may differ: each subject
/// gets its own CV bandwidth and is smoothed onto one common evaluation
/// grid; the tolerance rule uses the median observation count.
pub fn estimate_subjects(
    subjects: &[&SourceSeries],
    settings: &PipelineSettings,
    eval_points: usize,
) -> Result<EstimationOutput> {
    if subjects.is_empty() {
        return Err(Error::InvalidConfig("no subjects".into()));
    }
    // common evaluation window across subjects
    let lo = subjects
        .iter()
        .map(|s| s.grid.first())
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = subjects
        .iter()
        .map(|s| s.grid.last())
        .fold(f64::INFINITY, f64::min);
    if hi <= lo {
        return Err(Error::GridMismatch(
            "subjects share no common time window".into(),
        ));
    }
    if eval_points < 2 {
        return Err(Error::InvalidConfig("need at least 2 evaluation points".into()));
    }
    let eval_times: Vec<f64> = (0..eval_points)
        .map(|i| lo + (hi - lo) * i as f64 / (eval_points - 1) as f64)
        .collect();
    let eval_grid = TimeGrid::from_times(eval_times)?;

    let mut smoothed = Vec::new();
    let mut half1 = Vec::new();
    let mut half2 = Vec::new();
    let mut n_obs_all = Vec::new();
    let mut h_used = Vec::new();
    for s in subjects {
        let config = cv_config_for(s, settings)?;
        h_used.push(config.h);
        smoothed.push(smooth_source(&s.y, &s.grid, &eval_grid, &config)?);
        let (i1, i2) = split_indices(s.grid.len());
        let (y1, g1) = half_series(s, &i1)?;
        let (y2, g2) = half_series(s, &i2)?;
        half1.push(smooth_source(&y1, &g1, &eval_grid, &config)?);
        half2.push(smooth_source(&y2, &g2, &eval_grid, &config)?);
        n_obs_all.push(s.grid.len() as f64);
    }
    let gamma = estimate_gamma(&smoothed, settings.trim)?;
    let g1 = estimate_gamma(&half1, settings.trim)?;
    let g2 = estimate_gamma(&half2, settings.trim)?;
    let n_med = median(&n_obs_all).round() as usize;
    let tolerance = select_tolerance(&g1, &g2, &gamma, n_med.max(2), settings.c_d)?;
    let weights = stabilized_weights(&gamma, tolerance.absolute())?;
    let robust = aggregate(&smoothed, &weights)?;
    Ok(EstimationOutput {
        smoothed,
        gamma,
        tolerance,
        weights,
        robust,
        h_used: median(&h_used),
    })
}

/// Leave-one-subject-out evaluation on external multi-subject data. Each
/// held-out subject is scored trial-by-trial with the normalized loss,
/// substituting its own smoothed states and derivatives for the latent
/// truth. Subjects must carry a trial-id column.
pub fn leave_one_subject_out(
    subjects: &[SourceSeries],
    settings: &PipelineSettings,
    eval_points: usize,
) -> Result<Vec<LosoOutcome>> {
    if subjects.len() < 3 {
        return Err(Error::InvalidConfig(
            "leave-one-subject-out needs at least 3 subjects".into(),
        ));
    }
    let mut outcomes = Vec::new();
    for held_idx in 0..subjects.len() {
        let train: Vec<&SourceSeries> = subjects
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_idx)
            .map(|(_, s)| s)
            .collect();
        let est = estimate_subjects(&train, settings, eval_points)?;
        let weights = est.weights.clone();
        let (states, derivs, times) = robust_interior(&est.robust, settings.fit_trim)?;
        let fit_prop = fit_gradient_matching(&states, &derivs, &times, &settings.fit)?;
        let fit_baseline = fit_erm(&est.smoothed, settings.fit_trim, &settings.fit)?;

        // held-out subject, scored per trial on its own grid
        let held = &subjects[held_idx];
        let trials = held.trials.as_ref().ok_or_else(|| {
            Error::InvalidConfig(
                "leave-one-subject-out needs an explicit trial column".into(),
            )
        })?;
        let config = cv_config_for(held, settings)?;
        let sm = smooth_source(&held.y, &held.grid, &held.grid, &config)?;
        let mut seen = Vec::new();
        for &t in trials {
            if !seen.contains(&t) {
                seen.push(t);
            }
        }
        let keep = trim_mask(&held.grid, settings.fit_trim);
        let mut losses_prop = Vec::new();
        let mut losses_erm = Vec::new();
        for trial in seen {
            let rows: Vec<usize> = (0..held.grid.len())
                .filter(|&i| trials[i] == trial && keep[i])
                .collect();
            if rows.len() < 2 {
                continue;
            }
            let sub = held.grid.subgrid(&rows)?;
            let states = Mat::from_rows(rows.iter().map(|&i| sm.x_hat.row(i).to_vec()).collect())?;
            let derivs = Mat::from_rows(rows.iter().map(|&i| sm.d_hat.row(i).to_vec()).collect())?;
            match (
                normalized_loss(&fit_prop, &states, &derivs, &sub),
                normalized_loss(&fit_baseline, &states, &derivs, &sub),
            ) {
                (Ok(a), Ok(b)) => {
                    losses_prop.push(a);
                    losses_erm.push(b);
                }
                // trials with zero derivative energy are skipped
                (Err(Error::ZeroDenominator), _) | (_, Err(Error::ZeroDenominator)) => continue,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        if losses_prop.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "held-out subject {held_idx} has no scorable trials"
            )));
        }
        let favorable = losses_prop
            .iter()
            .zip(&losses_erm)
            .filter(|(a, b)| a <= b)
            .count();
        outcomes.push(LosoOutcome {
            held_out: held
                .name
                .clone()
                .unwrap_or_else(|| format!("subject_{held_idx}")),
            trials: losses_prop.len(),
            favorable_vs_erm: favorable,
            mean_normalized_proposed: losses_prop.iter().sum::<f64>() / losses_prop.len() as f64,
            mean_normalized_erm: losses_erm.iter().sum::<f64>() / losses_erm.len() as f64,
            weights: weights.omega.clone(),
        });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{DesignCase, HeterogeneityLevel, SystemKind};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// A constant predictor; kernel expansion with zero coefficients.
    fn constant_fit(values: Vec<f64>) -> FittedDynamics {
        let p = values.len();
        FittedDynamics {
            centers: Mat::from_rows(vec![vec![0.0; p]]).unwrap(),
            coefficients: Mat::zeros(1, p),
            target_means: values,
            kernel_bandwidth: 1.0,
            ridge: 0.0,
            include_time: false,
            time_scale: 1.0,
        }
    }

    fn constant_derivative_data(c: f64, n: usize) -> (Mat, Mat, TimeGrid) {
        let grid = TimeGrid::uniform(n, 1.0).unwrap();
        let mut states = Mat::zeros(n, 1);
        let mut derivs = Mat::zeros(n, 1);
        for (i, &t) in grid.times().iter().enumerate() {
            states.set(i, 0, c * t);
            derivs.set(i, 0, c);
        }
        (states, derivs, grid)
    }

    #[test]
    fn exact_dynamics_have_zero_loss() {
        let (states, derivs, grid) = constant_derivative_data(2.0, 30);
        let fit = constant_fit(vec![2.0]);
        let loss = trajectory_loss(&fit, &states, &derivs, &grid).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_predictor_recovers_derivative_energy_and_scaling() {
        let (states, derivs, grid) = constant_derivative_data(2.0, 30);
        let zero = constant_fit(vec![0.0]);
        let loss = trajectory_loss(&zero, &states, &derivs, &grid).unwrap();
        assert_relative_eq!(loss, 4.0, epsilon = 1e-10); // int 2^2 over [0,1]
        assert_relative_eq!(
            loss,
            derivative_energy(&derivs, &grid).unwrap(),
            epsilon = 1e-12
        );

        // doubling the residuals quadruples the loss
        let (states2, derivs2, _) = constant_derivative_data(4.0, 30);
        let loss2 = trajectory_loss(&zero, &states2, &derivs2, &grid).unwrap();
        assert_relative_eq!(loss2, 4.0 * loss, epsilon = 1e-10);
    }

    #[test]
    fn loss_report_identities() {
        let (states, derivs, grid) = constant_derivative_data(1.5, 25);
        let latent = LatentSeries {
            states: states.clone(),
            derivs: derivs.clone(),
        };
        let fit = constant_fit(vec![1.5]);
        let rep = loss_report(
            &fit,
            std::slice::from_ref(&latent),
            &latent,
            &grid,
            0,
            "proposed",
        )
        .unwrap();
        assert_abs_diff_eq!(rep.max_loss, 0.0, epsilon = 1e-12);
        assert_eq!(rep.max_loss, rep.avg_loss);

        let zero = constant_fit(vec![0.0]);
        let rep = loss_report(&zero, &[latent.clone(), latent.clone()], &latent, &grid, 0, "erm")
            .unwrap();
        assert!(rep.max_loss >= rep.avg_loss);
        assert_relative_eq!(
            rep.max_loss,
            rep.per_source.iter().fold(0.0_f64, |m, &v| m.max(v)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn normalized_loss_limits() {
        let (states, derivs, grid) = constant_derivative_data(3.0, 20);
        let exact = constant_fit(vec![3.0]);
        let zero = constant_fit(vec![0.0]);
        assert_abs_diff_eq!(
            normalized_loss(&exact, &states, &derivs, &grid).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            normalized_loss(&zero, &states, &derivs, &grid).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let no_motion = Mat::zeros(20, 1);
        assert!(matches!(
            normalized_loss(&zero, &states, &no_motion, &grid),
            Err(Error::ZeroDenominator)
        ));
    }

    #[test]
    fn pairwise_comparison_counts_ties_favorably() {
        assert_eq!(pairwise_comparison(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(pairwise_comparison(&[3.0, 3.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            pairwise_comparison(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(pairwise_comparison(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_noise_with_sigma_floor_covers_everywhere() {
        let mut template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            2,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            11,
        )
        .unwrap();
        template.noise_sd = 0.0;
        let settings = PipelineSettings::default();
        let report =
            coverage_experiment(&template, 2, 0.05, Some(1.0), &settings).unwrap();
        assert_eq!(report.ecp, 1.0);
        assert!(report.cil > 0.0);
    }

    #[test]
    fn smaller_alpha_means_wider_intervals_and_higher_coverage() {
        let template = SimulationConfig::benchmark(
            SystemKind::EnzymeNetwork,
            3,
            HeterogeneityLevel::I,
            DesignCase::Stable,
            29,
        )
        .unwrap();
        let settings = PipelineSettings::default();
        let tight = coverage_experiment(&template, 3, 0.5, None, &settings).unwrap();
        let wide = coverage_experiment(&template, 3, 0.05, None, &settings).unwrap();
        assert!(wide.cil > tight.cil);
        assert!(wide.ecp >= tight.ecp);
    }
}
