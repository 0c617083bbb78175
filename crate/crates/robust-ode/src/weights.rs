//! Worst-case-reward weights on the probability simplex: the plug-in
//! quadratic minimizer, ridge regularization, the bi-level min-norm
//! stabilization, and the split-sample tolerance rule.
//!
//! The quadratic solver is accelerated projected gradient descent with exact
//! Euclidean simplex projection. The stabilized weights solve
//!
//! ```text
//! min ||w||^2   s.t.  w in simplex,  w' G w <= U + d_n
//! ```
//!
//! by scalarization: `argmin ||w||^2 + mu * w' G w` traced over the
//! multiplier `mu` (equivalently the Tikhonov path), bisecting to the
//! smallest `mu` whose solution is feasible. For `d_n` at numerical zero the
//! path limit is taken directly with a small relative ridge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::GammaMatrix;
use crate::linalg::sym_operator_norm;
use crate::rng::{self, standard_normal};

const GAP_TOL_REL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 100_000;
const INNER_MAX_ITERATIONS: usize = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMethod {
    PlugIn,
    Ridge,
    Stabilized,
    Oracle,
}

impl std::fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::PlugIn => write!(f, "plugin"),
            Self::Ridge => write!(f, "ridge"),
            Self::Stabilized => write!(f, "stable"),
            Self::Oracle => write!(f, "oracle"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub fw_gap: f64,
    /// scalarization multiplier of the stabilized solve, when one was used
    pub multiplier: Option<f64>,
    /// `w' G w - (U + d_n)` against the PSD-floored matrix (negative when
    /// strictly feasible)
    pub constraint_residual: Option<f64>,
    /// minimum of the quadratic form over the simplex (PSD-floored matrix)
    pub u_min: Option<f64>,
}

/// A point on the K-simplex with its quadratic objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights {
    pub omega: Vec<f64>,
    /// `omega' Gamma omega` against the raw (unfloored) matrix
    pub objective: f64,
    pub method: WeightMethod,
    pub d_n: Option<f64>,
    pub lambda: Option<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Exact Euclidean projection onto the probability simplex (sort-based,
/// deterministic index tie-break).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        cumsum += v[i];
        let t = (cumsum - 1.0) / (r + 1) as f64;
        if v[i] - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[inline]
pub(crate) fn quad_form(a: &[f64], k: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += a[i * k + j] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

fn grad_into(a: &[f64], k: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += a[i * k + j] * x[j];
        }
        out[i] = 2.0 * row;
    }
}

/// Frank-Wolfe gap of `x' A x` over the simplex at `x`.
fn fw_gap(grad: &[f64], x: &[f64]) -> f64 {
    let dot: f64 = grad.iter().zip(x).map(|(g, v)| g * v).sum();
    let min = grad.iter().fold(f64::INFINITY, |m, &g| m.min(g));
    dot - min
}

struct ApgdOutcome {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    gap: f64,
    converged: bool,
}

/// Exact solve of the equality-constrained QP on the active face of `x`
/// (coordinates above threshold): minimize `w' A w` with the face weights
/// summing to one. Returns None when the face KKT system is singular or the
/// solution leaves the face.
fn face_polish(a: &[f64], k: usize, x: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..k).filter(|&i| x[i] > 1e-10).collect();
    let s = support.len();
    if s == 0 {
        return None;
    }
    let m = s + 1;
    let mut kkt = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            kkt[r * m + c] = 2.0 * a[i * k + j];
        }
        kkt[r * m + s] = 1.0;
        kkt[s * m + r] = 1.0;
    }
    rhs[s] = 1.0;
    crate::linalg::solve_pivoted(&mut kkt, m, &mut rhs).ok()?;
    let mut out = vec![0.0; k];
    let mut total = 0.0;
    for (r, &i) in support.iter().enumerate() {
        let v = rhs[r];
        if v < -1e-12 {
            return None;
        }
        let v = v.max(0.0);
        out[i] = v;
        total += v;
    }
    if !(total.is_finite()) || total <= 0.0 {
        return None;
    }
    for v in &mut out {
        *v /= total;
    }
    Some(out)
}

/// Accelerated projected gradient for `min x' A x` over the simplex.
/// `mu_strong > 0` switches to the constant-momentum scheme for strongly
/// convex objectives. Stops when the Frank-Wolfe gap falls below
/// `GAP_TOL_REL * (1 + |value|)`.
fn apgd(a: &[f64], k: usize, x0: &[f64], max_iter: usize, mu_strong: f64) -> ApgdOutcome {
    let mut x = project_simplex(x0);
    if k == 1 {
        return ApgdOutcome {
            value: a[0],
            x,
            iterations: 0,
            gap: 0.0,
            converged: true,
        };
    }
    let lip = 2.0 * sym_operator_norm(a, k);
    let mut grad = vec![0.0; k];
    grad_into(a, k, &x, &mut grad);
    let gap0 = fw_gap(&grad, &x);
    let f0 = quad_form(a, k, &x);
    if lip == 0.0 || gap0 <= GAP_TOL_REL * (1.0 + f0.abs()) {
        return ApgdOutcome {
            x,
            value: f0,
            iterations: 0,
            gap: gap0,
            converged: true,
        };
    }
    let step = 1.0 / lip;
    let beta_const = if mu_strong > 0.0 {
        let (sl, sm) = (lip.sqrt(), mu_strong.sqrt());
        (sl - sm) / (sl + sm)
    } else {
        0.0
    };
    let mut x_prev = x.clone();
    let mut t_acc = 1.0_f64;
    let mut f_x = f0;
    for it in 1..=max_iter {
        let beta = if mu_strong > 0.0 {
            beta_const
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
            let b = (t_acc - 1.0) / t_next;
            t_acc = t_next;
            b
        };
        let y: Vec<f64> = x
            .iter()
            .zip(&x_prev)
            .map(|(&xi, &xp)| xi + beta * (xi - xp))
            .collect();
        grad_into(a, k, &y, &mut grad);
        let mut x_new: Vec<f64> = y
            .iter()
            .zip(&grad)
            .map(|(&yi, &g)| yi - step * g)
            .collect();
        x_new = project_simplex(&x_new);
        let mut f_new = quad_form(a, k, &x_new);
        if f_new > f_x {
            // momentum overshot: restart from the current iterate
            t_acc = 1.0;
            grad_into(a, k, &x, &mut grad);
            x_new = project_simplex(
                &x.iter()
                    .zip(&grad)
                    .map(|(&xi, &g)| xi - step * g)
                    .collect::<Vec<f64>>(),
            );
            f_new = quad_form(a, k, &x_new);
        }
        grad_into(a, k, &x_new, &mut grad);
        let mut gap = fw_gap(&grad, &x_new);
        x_prev = std::mem::replace(&mut x, x_new);
        f_x = f_new;
        // periodic exact solve on the current active face: projected
        // gradient identifies the face quickly, the KKT solve finishes it
        if gap > GAP_TOL_REL * (1.0 + f_x.abs()) && it % 250 == 0 {
            if let Some(p) = face_polish(a, k, &x) {
                let f_p = quad_form(a, k, &p);
                if f_p <= f_x {
                    grad_into(a, k, &p, &mut grad);
                    let gap_p = fw_gap(&grad, &p);
                    if gap_p < gap {
                        x_prev = p.clone();
                        x = p;
                        f_x = f_p;
                        gap = gap_p;
                        t_acc = 1.0;
                    }
                }
            }
        }
        if gap <= GAP_TOL_REL * (1.0 + f_x.abs()) {
            return ApgdOutcome {
                x,
                value: f_x,
                iterations: it,
                gap,
                converged: true,
            };
        }
    }
    let value = quad_form(a, k, &x);
    grad_into(a, k, &x, &mut grad);
    let gap = fw_gap(&grad, &x);
    ApgdOutcome {
        x,
        value,
        iterations: max_iter,
        gap,
        converged: false,
    }
}

/// Minimize `w' A w` over the simplex. Returns a minimizer, the minimum
/// value `U`, and diagnostics. When minimizers are non-unique any one of
/// them may be returned; only `U` is then well defined.
pub fn minimize_quadratic_simplex(a: &[f64], k: usize) -> Result<(Vec<f64>, f64, SolveDiagnostics)> {
    if a.len() != k * k {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: k * k,
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("empty matrix".into()));
    }
    let uniform = vec![1.0 / k as f64; k];
    let out = apgd(a, k, &uniform, MAX_ITERATIONS, 0.0);
    if !out.converged {
        return Err(Error::MaxIterations {
            iterations: out.iterations,
            gap: out.gap,
            last_iterate: out.x,
        });
    }
    let diag = SolveDiagnostics {
        iterations: out.iterations,
        fw_gap: out.gap,
        u_min: Some(out.value),
        ..Default::default()
    };
    Ok((out.x, out.value, diag))
}

/// Unstabilized plug-in weights: the raw quadratic minimizer, returned
/// as-is even when minimizers are non-unique.
pub fn plug_in_weights(gamma: &GammaMatrix) -> Result<SimplexWeights> {
    let (omega, _, diagnostics) = minimize_quadratic_simplex(&gamma.entries, gamma.k)?;
    let objective = quad_form(&gamma.entries, gamma.k, &omega);
    Ok(SimplexWeights {
        omega,
        objective,
        method: WeightMethod::PlugIn,
        d_n: None,
        lambda: None,
        diagnostics,
    })
}

/// Ridge-regularized weights: plug-in applied to `Gamma + lambda I`.
pub fn ridge_weights(gamma: &GammaMatrix, lambda: f64) -> Result<SimplexWeights> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ridge penalty must be >= 0, got {lambda}"
        )));
    }
    let k = gamma.k;
    let mut a = gamma.entries.clone();
    for i in 0..k {
        a[i * k + i] += lambda;
    }
    let (omega, _, diagnostics) = minimize_quadratic_simplex(&a, k)?;
    let objective = quad_form(&gamma.entries, k, &omega);
    Ok(SimplexWeights {
        omega,
        objective,
        method: WeightMethod::Ridge,
        d_n: None,
        lambda: Some(lambda),
        diagnostics,
    })
}

/// Relative threshold below which `d_n` is treated as exactly zero and the
/// Tikhonov path limit replaces bisection.
const DEGENERATE_DN_REL: f64 = 1e-7;

/// Stabilized weights: among near-minimizers of the quadratic form (within
/// tolerance `d_n`), the point of minimum Euclidean norm. The matrix is
/// PSD-floored before the constrained stage; the reported objective uses the
/// raw matrix.
pub fn stabilized_weights(gamma: &GammaMatrix, d_n: f64) -> Result<SimplexWeights> {
    if !(d_n >= 0.0) || !d_n.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "tolerance d_n must be finite and >= 0, got {d_n}"
        )));
    }
    let k = gamma.k;
    let floored = if gamma.psd_floored {
        gamma.clone()
    } else {
        gamma.floored()
    };
    let a = &floored.entries;
    let (w_min, u, _) = minimize_quadratic_simplex(a, k)?;
    let c = u + d_n;
    let scale = 1.0 + u.abs() + d_n;
    let slack = 1e-9 * scale;
    let uniform = vec![1.0 / k as f64; k];

    let finish = |omega: Vec<f64>, multiplier: Option<f64>, iterations: usize, gap: f64| {
        let q = quad_form(a, k, &omega);
        SimplexWeights {
            objective: quad_form(&gamma.entries, k, &omega),
            omega,
            method: WeightMethod::Stabilized,
            d_n: Some(d_n),
            lambda: None,
            diagnostics: SolveDiagnostics {
                iterations,
                fw_gap: gap,
                multiplier,
                constraint_residual: Some(q - c),
                u_min: Some(u),
            },
        }
    };

    // The global min-norm simplex point: done when it is feasible.
    if quad_form(a, k, &uniform) <= c + slack {
        return Ok(finish(uniform, Some(0.0), 0, 0.0));
    }

    let lam_max = sym_operator_norm(a, k).max(f64::MIN_POSITIVE);
    let scalarized = |mu: f64| -> Vec<f64> {
        let mut m = a.iter().map(|&v| mu * v).collect::<Vec<f64>>();
        for i in 0..k {
            m[i * k + i] += 1.0;
        }
        m
    };

    // Feasibility polish: pull the iterate toward the plug-in minimizer
    // until the constraint holds within slack (convexity of the form).
    let polish = |mut omega: Vec<f64>| -> Vec<f64> {
        let q = quad_form(a, k, &omega);
        let over = q - (c + 0.5 * slack);
        if over > 0.0 {
            let drop = (q - quad_form(a, k, &w_min)).max(f64::MIN_POSITIVE);
            let theta = (over / drop).min(1.0);
            for (o, m) in omega.iter_mut().zip(&w_min) {
                *o += theta * (*m - *o);
            }
        }
        omega
    };

    if d_n <= DEGENERATE_DN_REL * scale {
        // d_n at numerical zero: min-norm point of the argmin set, reached
        // as the small-ridge limit of the Tikhonov path.
        let eps = lam_max * DEGENERATE_DN_REL;
        let mut m = a.clone();
        for i in 0..k {
            m[i * k + i] += eps;
        }
        let out = apgd(&m, k, &uniform, INNER_MAX_ITERATIONS, 2.0 * eps);
        let omega = polish(out.x);
        return Ok(finish(omega, None, out.iterations, out.gap));
    }

    // Bisection on the multiplier: q(omega(mu)) is non-increasing in mu and
    // q(omega(mu)) - U <= 1/mu, so mu_hi = 2/d_n is feasible up to solver
    // error.
    let mut mu_hi = 2.0 / d_n;
    let mut warm = w_min.clone();
    let mut total_iter = 0usize;
    let mut best: Option<(f64, Vec<f64>, f64)> = None; // (mu, omega, gap)
    for _ in 0..60 {
        let out = apgd(&scalarized(mu_hi), k, &warm, INNER_MAX_ITERATIONS, 2.0);
        total_iter += out.iterations;
        warm = out.x.clone();
        if quad_form(a, k, &out.x) <= c + 0.5 * slack {
            best = Some((mu_hi, out.x, out.gap));
            break;
        }
        mu_hi *= 4.0;
        if mu_hi > 1e18 {
            break;
        }
    }
    let (mut mu_hi, mut omega_best, mut gap_best) = match best {
        Some(b) => b,
        None => {
            // w_min itself satisfies the constraint up to solver tolerance
            let omega = polish(w_min.clone());
            let residual = quad_form(a, k, &omega) - c;
            if residual > slack {
                return Err(Error::BisectionStall {
                    residual,
                    best_feasible: omega,
                });
            }
            return Ok(finish(omega, None, total_iter, f64::NAN));
        }
    };
    let mut mu_lo = 0.0;
    while mu_hi - mu_lo > 1e-12 * mu_hi {
        let mu = 0.5 * (mu_lo + mu_hi);
        let out = apgd(&scalarized(mu), k, &warm, INNER_MAX_ITERATIONS, 2.0);
        total_iter += out.iterations;
        warm = out.x.clone();
        if quad_form(a, k, &out.x) <= c + 0.5 * slack {
            mu_hi = mu;
            omega_best = out.x;
            gap_best = out.gap;
        } else {
            mu_lo = mu;
        }
        if total_iter > 40 * INNER_MAX_ITERATIONS {
            break;
        }
    }
    let omega = polish(omega_best);
    let residual = quad_form(a, k, &omega) - c;
    if residual > slack {
        return Err(Error::BisectionStall {
            residual,
            best_feasible: omega,
        });
    }
    Ok(finish(omega, Some(mu_hi), total_iter, gap_best))
}

// ---------------------------------------------------------------------------
// Tolerance selection
// ---------------------------------------------------------------------------

/// The data-adaptive tolerance
/// `d_n = C_d log(n) ( ||G_I1 - G_I2||_op / ||G||_op  AND  1 )`.
///
/// `d_n` is dimensionless (the ratio removes the Gram matrix's scale);
/// the quadratic constraint lives in the matrix's units, so the stabilized
/// solve consumes `d_n * ||G||_op` — see [`ToleranceConfig::absolute`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub c_d: f64,
    pub d_n: f64,
    /// split-sample operator-norm ratio before truncation at 1
    pub ratio: f64,
    pub log_n: f64,
    /// `||G||_op`, the scale that converts `d_n` to constraint units
    pub gamma_norm: f64,
}

impl ToleranceConfig {
    /// Tolerance in the units of the quadratic constraint.
    pub fn absolute(&self) -> f64 {
        self.d_n * self.gamma_norm
    }
}

pub fn select_tolerance(
    gamma_half1: &GammaMatrix,
    gamma_half2: &GammaMatrix,
    gamma: &GammaMatrix,
    n: usize,
    c_d: f64,
) -> Result<ToleranceConfig> {
    if !(0.001..=1.0).contains(&c_d) {
        return Err(Error::InvalidConfig(format!(
            "C_d must lie in [0.001, 1], got {c_d}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidConfig("n must be >= 2".into()));
    }
    let denom = gamma.operator_norm();
    if denom <= 0.0 {
        return Err(Error::ZeroGamma);
    }
    let ratio = gamma_half1.operator_norm_diff(gamma_half2)? / denom;
    let log_n = (n as f64).ln();
    Ok(ToleranceConfig {
        c_d,
        d_n: c_d * log_n * ratio.min(1.0),
        ratio,
        log_n,
        gamma_norm: denom,
    })
}

// ---------------------------------------------------------------------------
// Stability experiment (perturbed block-diagonal Gram)
// ---------------------------------------------------------------------------

/// The 5 x 5 block-diagonal Gram matrix of the stability experiment:
/// blocks [[1,1],[1,1]], 0, [[2,-2],[-2,2]].
pub fn stability_gamma() -> GammaMatrix {
    let entries = vec![
        1.0, 1.0, 0.0, 0.0, 0.0, //
        1.0, 1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 2.0, -2.0, //
        0.0, 0.0, 0.0, -2.0, 2.0,
    ];
    GammaMatrix {
        k: 5,
        entries,
        quad_rule: "exact".to_string(),
        trim: 0.0,
        psd_floored: false,
        min_eig_raw: 0.0,
    }
}

/// Min-norm minimizer of the stability-experiment Gram over the simplex.
pub fn stability_target() -> Vec<f64> {
    vec![0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityRule {
    PlugIn,
    /// d_n = 1 / n^2
    InverseSquare,
    /// d_n = log(n) / n
    LogOverN,
    /// d_n = 1 / log(n)
    InverseLog,
    /// split-sample adaptive rule on synthetic half-sample perturbations
    Adaptive,
}

impl StabilityRule {
    pub fn label(&self) -> &'static str {
        match self {
            Self::PlugIn => "plugin",
            Self::InverseSquare => "1_over_n2",
            Self::LogOverN => "logn_over_n",
            Self::InverseLog => "1_over_logn",
            Self::Adaptive => "adaptive",
        }
    }

    pub fn all() -> [Self; 5] {
        [
            Self::PlugIn,
            Self::InverseSquare,
            Self::LogOverN,
            Self::InverseLog,
            Self::Adaptive,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub rule: String,
    pub n_grid: Vec<usize>,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

const STREAM_STABILITY_BASE: u64 = 0x57AB_0000;

/// Symmetric squared-Gaussian perturbation with `z ~ N(0, sd)`; entries for
/// `j <= j'` are drawn row-major and mirrored.
fn perturbation(k: usize, sd: f64, rng: &mut impl rand_core::RngCore) -> Vec<f64> {
    let mut p = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let z = sd * standard_normal(rng);
            p[i * k + j] = z * z;
            p[j * k + i] = z * z;
        }
    }
    p
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Median loss curves `||w_hat - w*||` against the stability target, for the
/// plug-in estimator and the stabilized estimator under each tolerance rule,
/// over perturbed matrices `Gamma + (z^2)` with `z ~ N(0, 1/sqrt(n))`.
pub fn stability_experiment(
    n_grid: &[usize],
    rules: &[StabilityRule],
    seeds: &[u64],
) -> Result<Vec<StabilityCurve>> {
    let gamma = stability_gamma();
    let target = stability_target();
    let k = gamma.k;
    let mut curves = Vec::new();
    for rule in rules {
        let mut median = Vec::with_capacity(n_grid.len());
        let mut q25 = Vec::with_capacity(n_grid.len());
        let mut q75 = Vec::with_capacity(n_grid.len());
        for &n in n_grid {
            let losses: Result<Vec<f64>> = seeds
                .par_iter()
                .map(|&seed| -> Result<f64> {
                    let mut rng = rng::stream(seed, STREAM_STABILITY_BASE + n as u64);
                    let sd = 1.0 / (n as f64).sqrt();
                    let mut hat = gamma.clone();
                    let pert = perturbation(k, sd, &mut rng);
                    for (e, p) in hat.entries.iter_mut().zip(&pert) {
                        *e += p;
                    }
                    hat.min_eig_raw = f64::NAN;
                    let omega = match rule {
                        StabilityRule::PlugIn => plug_in_weights(&hat)?.omega,
                        StabilityRule::InverseSquare => {
                            stabilized_weights(&hat, 1.0 / (n as f64).powi(2))?.omega
                        }
                        StabilityRule::LogOverN => {
                            stabilized_weights(&hat, (n as f64).ln() / n as f64)?.omega
                        }
                        StabilityRule::InverseLog => {
                            stabilized_weights(&hat, 1.0 / (n as f64).ln())?.omega
                        }
                        StabilityRule::Adaptive => {
                            let sd_half = (2.0 / n as f64).sqrt();
                            let p1 = perturbation(k, sd_half, &mut rng);
                            let p2 = perturbation(k, sd_half, &mut rng);
                            let mut g1 = gamma.clone();
                            let mut g2 = gamma.clone();
                            for ((e1, e2), (q1, q2)) in g1
                                .entries
                                .iter_mut()
                                .zip(g2.entries.iter_mut())
                                .zip(p1.iter().zip(&p2))
                            {
                                *e1 += q1;
                                *e2 += q2;
                            }
                            let tol = select_tolerance(&g1, &g2, &hat, n, 0.01)?;
                            stabilized_weights(&hat, tol.d_n)?.omega
                        }
                    };
                    Ok(omega
                        .iter()
                        .zip(&target)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt())
                })
                .collect();
            let mut losses = losses?;
            losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
            median.push(quantile_sorted(&losses, 0.5));
            q25.push(quantile_sorted(&losses, 0.25));
            q75.push(quantile_sorted(&losses, 0.75));
        }
        curves.push(StabilityCurve {
            rule: rule.label().to_string(),
            n_grid: n_grid.to_vec(),
            median,
            q25,
            q75,
        });
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn gamma_of(entries: Vec<f64>, k: usize) -> GammaMatrix {
        GammaMatrix::from_entries(entries, k, 0.0).unwrap()
    }

    #[test]
    fn projection_handles_known_cases() {
        let p = project_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, 0.3, 0.3]);
        let sum: f64 = p.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn diagonal_two_matrix_matches_kkt_solution() {
        let g = gamma_of(vec![1.0, 0.0, 0.0, 2.0], 2);
        let w = plug_in_weights(&g).unwrap();
        assert_abs_diff_eq!(w.omega[0], 2.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(w.omega[1], 1.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(w.objective, 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_matrix_gives_uniform_weights() {
        let mut entries = vec![0.0; 25];
        for i in 0..5 {
            entries[i * 5 + i] = 1.0;
        }
        let g = gamma_of(entries, 5);
        let w = plug_in_weights(&g).unwrap();
        for &wi in &w.omega {
            assert_abs_diff_eq!(wi, 0.2, epsilon = 1e-9);
        }
        assert_relative_eq!(w.objective, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn single_source_is_trivial() {
        let g = gamma_of(vec![3.5], 1);
        let w = plug_in_weights(&g).unwrap();
        assert_eq!(w.omega, vec![1.0]);
        assert_eq!(w.objective, 3.5);
    }

    #[test]
    fn stabilized_handles_degenerate_diagonal() {
        // diag(0,0,1): minimizers are {(a, 1-a, 0)}; min-norm is (1/2, 1/2, 0)
        let g = gamma_of(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 3);
        let w = stabilized_weights(&g, 0.0).unwrap();
        assert_abs_diff_eq!(w.omega[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(w.omega[1], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(w.omega[2], 0.0, epsilon = 1e-6);

        // with d_n = 0.04 the third coordinate may rise to sqrt(0.04) = 0.2
        let w = stabilized_weights(&g, 0.04).unwrap();
        assert_abs_diff_eq!(w.omega[2], 0.2, epsilon = 1e-4);
        assert_abs_diff_eq!(w.omega[0], 0.4, epsilon = 1e-4);
        assert_abs_diff_eq!(w.omega[1], 0.4, epsilon = 1e-4);
    }

    #[test]
    fn stabilized_solves_block_diagonal_example() {
        let g = stability_gamma();
        let w = stabilized_weights(&g, 0.0).unwrap();
        let target = stability_target();
        for (got, want) in w.omega.iter().zip(&target) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-5);
        }
        let res = w.diagnostics.constraint_residual.unwrap();
        assert!(res <= 1e-9 * (1.0 + 0.0 + 0.0) + 1e-12, "residual {res}");
    }

    #[test]
    fn vacuous_constraint_returns_uniform() {
        let g = gamma_of(vec![1.0, 0.0, 0.0, 2.0], 2);
        let w = stabilized_weights(&g, 10.0).unwrap();
        assert_abs_diff_eq!(w.omega[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(w.omega[1], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn identical_sources_stabilize_to_uniform() {
        let g = gamma_of(vec![2.0; 16], 4);
        let w = stabilized_weights(&g, 0.0).unwrap();
        for &wi in &w.omega {
            assert_abs_diff_eq!(wi, 0.25, epsilon = 1e-8);
        }
    }

    #[test]
    fn ridge_limits_match_plugin_and_uniform() {
        let g = gamma_of(vec![1.0, 0.0, 0.0, 2.0], 2);
        let w0 = ridge_weights(&g, 0.0).unwrap();
        let wp = plug_in_weights(&g).unwrap();
        for (a, b) in w0.omega.iter().zip(&wp.omega) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        let w_inf = ridge_weights(&g, 1e9).unwrap();
        assert_abs_diff_eq!(w_inf.omega[0], 0.5, epsilon = 1e-5);

        // diag(1,2) + I: argmin of 2w1^2 + 3w2^2 is (0.6, 0.4)
        let w1 = ridge_weights(&g, 1.0).unwrap();
        assert_abs_diff_eq!(w1.omega[0], 0.6, epsilon = 1e-8);
        assert_abs_diff_eq!(w1.omega[1], 0.4, epsilon = 1e-8);
    }

    #[test]
    fn tolerance_formula_is_exact() {
        let g = gamma_of(vec![1.0, 0.0, 0.0, 1.0], 2);
        let tol = select_tolerance(&g, &g, &g, 40, 0.01).unwrap();
        assert_eq!(tol.d_n, 0.0);

        // ratio 0.5: halves differ by diag(0.5) against norm 1
        let mut g1 = g.clone();
        g1.entries = vec![1.25, 0.0, 0.0, 1.25];
        let mut g2 = g.clone();
        g2.entries = vec![0.75, 0.0, 0.0, 0.75];
        let tol = select_tolerance(&g1, &g2, &g, 40, 0.01).unwrap();
        assert_relative_eq!(tol.d_n, 0.01 * (40.0_f64).ln() * 0.5, epsilon = 1e-12);
        assert_relative_eq!(tol.d_n, 0.018444397270569683, epsilon = 1e-9);

        // ratio above one is truncated
        let mut g_big = g.clone();
        g_big.entries = vec![10.0, 0.0, 0.0, 10.0];
        let tol = select_tolerance(&g_big, &g, &g, 40, 0.01).unwrap();
        assert_relative_eq!(tol.d_n, 0.01 * (40.0_f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn tolerance_rejects_zero_gram() {
        let z = gamma_of(vec![0.0; 4], 2);
        assert!(matches!(
            select_tolerance(&z, &z, &z, 40, 0.01),
            Err(Error::ZeroGamma)
        ));
    }

    #[test]
    fn stabilized_norm_is_monotone_in_tolerance() {
        let mut rng = rng::stream(21, 0);
        for _ in 0..10 {
            let k = 4;
            // random PSD: B B' with standard normal B
            let mut b = vec![0.0; k * k];
            for v in &mut b {
                *v = standard_normal(&mut rng);
            }
            let mut a = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    let mut s = 0.0;
                    for l in 0..k {
                        s += b[i * k + l] * b[j * k + l];
                    }
                    a[i * k + j] = s;
                }
            }
            let g = gamma_of(a, k);
            let mut prev_norm = f64::INFINITY;
            for d_n in [0.0, 0.01, 0.05, 0.2, 1.0, 5.0] {
                let w = stabilized_weights(&g, d_n).unwrap();
                let norm: f64 = w.omega.iter().map(|x| x * x).sum();
                assert!(
                    norm <= prev_norm + 1e-7,
                    "norm {norm} rose from {prev_norm} at d_n = {d_n}"
                );
                prev_norm = norm;
            }
        }
    }

    #[test]
    fn stabilized_is_scale_equivariant() {
        let g = gamma_of(vec![2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5], 3);
        let c = 7.5;
        let mut g_scaled = g.clone();
        for e in &mut g_scaled.entries {
            *e *= c;
        }
        let d_n = 0.05;
        let w = stabilized_weights(&g, d_n).unwrap();
        let w_scaled = stabilized_weights(&g_scaled, c * d_n).unwrap();
        for (a, b) in w.omega.iter().zip(&w_scaled.omega) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
        assert_relative_eq!(w_scaled.objective, c * w.objective, epsilon = 1e-6);
    }

    #[test]
    fn simplex_feasibility_holds_on_all_outputs() {
        let g = stability_gamma();
        for w in [
            plug_in_weights(&g).unwrap(),
            ridge_weights(&g, 0.3).unwrap(),
            stabilized_weights(&g, 0.01).unwrap(),
        ] {
            let sum: f64 = w.omega.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-10, "sum {sum}");
            assert!(w.omega.iter().all(|&x| x >= -1e-10));
            assert!(w.omega.iter().all(|&x| x <= 1.0 + 1e-10));
        }
    }
}
