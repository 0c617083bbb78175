//! Local polynomial estimation of trajectories, derivatives, and pointwise
//! standard errors from noisy observations.
//!
//! The value and derivative come jointly from a weighted local polynomial
//! fit (intercept and slope). The standard error is the kernel plug-in
//!
//! ```text
//! sigma(t) = { (1/(n h_se)) sum_i G((t_i - t)/h_se)^2 (Y(t_i) - Xhat(t_i))^2 }^(1/2)
//! ```
//!
//! computed on time standardized to `[0, 1]`: the plug-in is calibrated for
//! unit design density, so the prefactor uses bandwidths in units of the
//! observation span. Confidence intervals downstream use the same
//! standardized bandwidth in their `sqrt(n h)` scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{cholesky_factor, cholesky_apply, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    Epanechnikov,
    Gaussian,
}

impl Kernel {
    /// Kernel density at `u` (both kernels integrate to one).
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }

    /// Effective half-support in bandwidth units: evaluation points closer
    /// than this to the observation window's edge see a truncated kernel and
    /// are flagged as boundary points.
    pub fn effective_support(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 1.0,
            Kernel::Gaussian => 3.0,
        }
    }

    /// Window half-width (in bandwidth units) outside which weights are
    /// numerically zero relative to the center (below 1e-16 for Gaussian).
    fn numerical_support(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 1.0,
            Kernel::Gaussian => 8.5,
        }
    }
}

/// The kernel used inside the plug-in standard error by [`smooth_source`].
/// Fixed independently of the fitting kernel: together with the default
/// order-2 Gaussian local fit it makes the plug-in match the estimator's
/// sampling variance closely enough for nominal interval coverage.
pub const SE_KERNEL: Kernel = Kernel::Epanechnikov;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// value/derivative bandwidth, in the time units of the data
    pub h: f64,
    /// standard-error bandwidth, in the time units of the data
    pub h_se: f64,
    /// polynomial order (1..=3); order 2 estimates value and slope jointly
    pub order: usize,
    /// kernel of the local polynomial fit
    pub kernel: Kernel,
    /// multiplier in (0, 1] applied to CV bandwidths for inference runs
    pub undersmooth_factor: f64,
}

impl SmoothingConfig {
    pub fn with_bandwidth(h: f64) -> Self {
        Self {
            h,
            h_se: h,
            order: 2,
            kernel: Kernel::Gaussian,
            undersmooth_factor: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.h_se > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bandwidths must be positive (h = {}, h_se = {})",
                self.h, self.h_se
            )));
        }
        if !(1..=3).contains(&self.order) {
            return Err(Error::InvalidConfig(format!(
                "polynomial order must be 1..=3, got {}",
                self.order
            )));
        }
        if !(self.undersmooth_factor > 0.0 && self.undersmooth_factor <= 1.0) {
            return Err(Error::InvalidConfig(
                "undersmooth factor must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Bandwidth to use when a CV-selected `h_cv` feeds interval inference.
pub fn inference_bandwidth(h_cv: f64, config: &SmoothingConfig) -> f64 {
    h_cv * config.undersmooth_factor
}

/// Per-source smoothing output on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedSource {
    /// m x p fitted values
    pub x_hat: Mat,
    /// m x p fitted derivatives
    pub d_hat: Mat,
    /// m x p plug-in standard errors
    pub sigma_hat: Mat,
    pub eval_grid: TimeGrid,
    pub config: SmoothingConfig,
    /// evaluation points within `h` of either end of the observation window
    pub boundary: Vec<bool>,
    pub n_obs: usize,
    /// observation window length; standardized bandwidth is `h / span`
    pub span: f64,
}

impl SmoothedSource {
    /// Value bandwidth on time standardized to `[0, 1]`.
    pub fn h_std(&self) -> f64 {
        self.config.h / self.span
    }

    pub fn dim(&self) -> usize {
        self.x_hat.cols()
    }
}

const WIDEN_FACTOR: f64 = 1.5;
const MAX_WIDENINGS: usize = 4;

struct LocalFit {
    value: f64,
    slope: f64,
    /// diagonal leverage of the observation at the query point, when the
    /// query coincides with observation `i` (basis reduces to e1)
    self_leverage: f64,
}

/// Weighted local polynomial fit centered at `t`. The design uses the scaled
/// basis ((t_i - t)/h)^j for conditioning; slope is rescaled back.
fn fit_at(
    times: &[f64],
    values: &[f64],
    t: f64,
    config: &SmoothingConfig,
) -> Result<LocalFit> {
    let q = config.order + 1;
    let mut h_eff = config.h;
    for widening in 0..=MAX_WIDENINGS {
        // times are sorted: restrict to the window where weights are nonzero
        let cut = h_eff * config.kernel.numerical_support();
        let lo = times.partition_point(|&ti| ti < t - cut);
        let hi = times.partition_point(|&ti| ti <= t + cut);
        let mut positive = 0usize;
        for &ti in &times[lo..hi] {
            if config.kernel.eval((ti - t) / h_eff) > 0.0 {
                positive += 1;
            }
        }
        if positive < q {
            h_eff *= WIDEN_FACTOR;
            continue;
        }
        let mut m = vec![0.0; q * q];
        let mut rhs = vec![0.0; q];
        for i in lo..hi {
            let u = (times[i] - t) / h_eff;
            let w = config.kernel.eval(u);
            if w == 0.0 {
                continue;
            }
            let mut basis = vec![0.0; q];
            let mut b = 1.0;
            for item in basis.iter_mut() {
                *item = b;
                b *= u;
            }
            for a in 0..q {
                for bix in a..q {
                    m[a * q + bix] += w * basis[a] * basis[bix];
                }
                rhs[a] += w * basis[a] * values[i];
            }
        }
        for a in 0..q {
            for bix in 0..a {
                m[a * q + bix] = m[bix * q + a];
            }
        }
        let mut factor = m.clone();
        if cholesky_factor(&mut factor, q).is_err() {
            h_eff *= WIDEN_FACTOR;
            continue;
        }
        let mut beta = rhs.clone();
        cholesky_apply(&factor, q, &mut beta);
        // (M^-1 e1)_0 for the leverage shortcut
        let mut e1 = vec![0.0; q];
        e1[0] = 1.0;
        cholesky_apply(&factor, q, &mut e1);
        let self_leverage = config.kernel.eval(0.0) * e1[0];
        let value = beta[0];
        let slope = beta[1] / h_eff;
        if !value.is_finite() || !slope.is_finite() {
            return Err(Error::SingularLocalFit {
                t,
                widenings: widening,
            });
        }
        return Ok(LocalFit {
            value,
            slope,
            self_leverage,
        });
    }
    Err(Error::SingularLocalFit {
        t,
        widenings: MAX_WIDENINGS,
    })
}

/// Local polynomial values and derivatives of one series at the query points.
pub fn local_poly_smooth(
    times: &[f64],
    values: &[f64],
    query: &[f64],
    config: &SmoothingConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    if times.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: times.len(),
            right: values.len(),
        });
    }
    if times.len() < config.order + 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least order + 2 = {} observations, got {}",
            config.order + 2,
            times.len()
        )));
    }
    let mut x_hat = Vec::with_capacity(query.len());
    let mut d_hat = Vec::with_capacity(query.len());
    for &t in query {
        let fit = fit_at(times, values, t, config)?;
        x_hat.push(fit.value);
        d_hat.push(fit.slope);
    }
    Ok((x_hat, d_hat))
}

/// Leave-one-out cross-validation bandwidth over a log-spaced candidate
/// grid. Returns the CV-optimal candidate (endpoints when CV is monotone);
/// multiply by the undersmooth factor before inference runs.
pub fn select_bandwidth(times: &[f64], values: &[f64], config: &SmoothingConfig) -> Result<f64> {
    let n = times.len();
    if n < 8 {
        return Err(Error::InvalidConfig(format!(
            "bandwidth selection needs n >= 8, got {n}"
        )));
    }
    let span = times[n - 1] - times[0];
    let avg_spacing = span / (n - 1) as f64;
    let lo = (config.order + 2) as f64 * 0.6 * avg_spacing;
    let hi = span / 2.0;
    let candidates = log_spaced(lo.min(hi / 1.5), hi, 12);
    let stride = (n / 200).max(1);

    let mut best = (f64::INFINITY, candidates[candidates.len() - 1]);
    for &h in &candidates {
        let trial = SmoothingConfig { h, ..*config };
        let mut score = 0.0;
        let mut usable = true;
        for i in (0..n).step_by(stride) {
            let fit = match fit_at(times, values, times[i], &trial) {
                Ok(f) => f,
                Err(_) => {
                    usable = false;
                    break;
                }
            };
            let denom = 1.0 - fit.self_leverage;
            if denom <= 1e-10 {
                usable = false;
                break;
            }
            let r = (values[i] - fit.value) / denom;
            score += r * r;
        }
        if usable && score < best.0 {
            best = (score, h);
        }
    }
    Ok(best.1)
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let l0 = lo.ln();
    let l1 = hi.ln();
    (0..count)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Kernel plug-in standard error at `t` from observation-grid residuals.
pub fn estimate_sigma(
    times: &[f64],
    residuals: &[f64],
    t: f64,
    h_se: f64,
    kernel: Kernel,
) -> Result<f64> {
    if times.len() != residuals.len() {
        return Err(Error::LengthMismatch {
            left: times.len(),
            right: residuals.len(),
        });
    }
    if !(h_se > 0.0) {
        return Err(Error::InvalidConfig("h_se must be positive".into()));
    }
    let n = times.len() as f64;
    let mut acc = 0.0;
    let mut any = false;
    for (&ti, &ri) in times.iter().zip(residuals) {
        let g = kernel.eval((ti - t) / h_se);
        if g > 0.0 {
            any = true;
        }
        acc += g * g * ri * ri;
    }
    if !any {
        return Err(Error::EmptyWindow { t });
    }
    Ok((acc / (n * h_se)).sqrt())
}

/// Smooth one source dimension-by-dimension: fitted values and derivatives
/// on the evaluation grid, residual-based standard errors, and boundary
/// flags. Standard errors use [`SE_KERNEL`] on standardized time.
pub fn smooth_source(
    y: &Mat,
    grid: &TimeGrid,
    eval_grid: &TimeGrid,
    config: &SmoothingConfig,
) -> Result<SmoothedSource> {
    config.validate()?;
    let n = grid.len();
    if y.rows() != n {
        return Err(Error::GridMismatch(format!(
            "observations have {} rows for a grid of {} points",
            y.rows(),
            n
        )));
    }
    if n < config.order + 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least order + 2 = {} observations, got {n}",
            config.order + 2
        )));
    }
    let p = y.cols();
    let m = eval_grid.len();
    let times = grid.times();
    let eval_times = eval_grid.times();
    let span = grid.span();

    let std_times: Vec<f64> = times.iter().map(|&t| (t - grid.first()) / span).collect();
    let h_se_std = config.h_se / span;

    let mut x_hat = Mat::zeros(m, p);
    let mut d_hat = Mat::zeros(m, p);
    let mut sigma_hat = Mat::zeros(m, p);
    for j in 0..p {
        let series = y.col(j);
        let (xe, de) = local_poly_smooth(times, &series, eval_times, config)?;
        // observation-grid fit with self-leverages: residuals are
        // studentized by 1/sqrt(1 - l_ii) so the near-interpolating fits of
        // small windows do not deflate the noise estimate
        let mut residuals = Vec::with_capacity(n);
        for (i, &t) in times.iter().enumerate() {
            let fit = fit_at(times, &series, t, config)?;
            let deflation = (1.0 - fit.self_leverage).clamp(0.05, 1.0);
            residuals.push((series[i] - fit.value) / deflation.sqrt());
        }
        for i in 0..m {
            let t_std = (eval_times[i] - grid.first()) / span;
            let s = estimate_sigma(&std_times, &residuals, t_std, h_se_std, SE_KERNEL)?;
            x_hat.set(i, j, xe[i]);
            d_hat.set(i, j, de[i]);
            sigma_hat.set(i, j, s);
        }
    }
    let margin = config.h * config.kernel.effective_support();
    let boundary = eval_times
        .iter()
        .map(|&t| t - grid.first() < margin || grid.last() - t < margin)
        .collect();
    Ok(SmoothedSource {
        x_hat,
        d_hat,
        sigma_hat,
        eval_grid: eval_grid.clone(),
        config: *config,
        boundary,
        n_obs: n,
        span,
    })
}
