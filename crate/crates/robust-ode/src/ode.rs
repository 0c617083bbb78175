//! Benchmark dynamic systems, heterogeneity schedules, a fixed-step RK4
//! integrator, and noisy multi-source data generation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::rng::{self, simplex_uniform, standard_normal};

/// Stream tags for [`crate::rng::stream`]: the simplex combination weights of
/// the unstable design live on their own stream so they do not depend on the
/// grid size, and each source index gets its own noise stream.
const STREAM_COMBO: u64 = 1;
const STREAM_NOISE_BASE: u64 = 0x100;

// ---------------------------------------------------------------------------
// Systems and parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemKind {
    EnzymeNetwork,
    LotkaVolterra,
    Custom,
}

impl SystemKind {
    pub fn dimension(&self) -> Option<usize> {
        match self {
            SystemKind::EnzymeNetwork => Some(3),
            SystemKind::LotkaVolterra => Some(10),
            SystemKind::Custom => None,
        }
    }

    /// Default initial state of the benchmark systems.
    pub fn default_initial_state(&self) -> Option<Vec<f64>> {
        match self {
            SystemKind::EnzymeNetwork => Some(vec![0.5; 3]),
            SystemKind::LotkaVolterra => Some(vec![1.0; 10]),
            SystemKind::Custom => None,
        }
    }

    /// Default observation design of the benchmark systems: (n, T, noise sd).
    pub fn default_design(&self) -> Option<(usize, f64, f64)> {
        match self {
            SystemKind::EnzymeNetwork => Some((40, 2.0, 0.01)),
            SystemKind::LotkaVolterra => Some((200, 100.0, 1.0)),
            SystemKind::Custom => None,
        }
    }

    /// Integrator substep target: substeps are chosen so that grid spacing
    /// divided by substeps stays below this. 0.01 keeps the step-halving
    /// sup-norm change of both benchmark systems under 1e-6.
    fn substep_target(&self) -> f64 {
        0.01
    }
}

/// Parameters of the three-node enzyme regulatory network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnzymeParams {
    pub c0: f64,
    /// catalytic rates c_1..c_6
    pub c: [f64; 6],
    /// Michaelis-Menten constants C_1..C_6
    pub cap_c: [f64; 6],
    pub tilde_c1: f64,
    pub tilde_c2: f64,
}

/// Parameters of the ten-dimensional predator-prey system; `alpha[j]` holds
/// (alpha_1..alpha_4) for pair `j + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterraParams {
    pub alpha: [[f64; 4]; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SystemParams {
    Enzyme(EnzymeParams),
    LotkaVolterra(LotkaVolterraParams),
    None,
}

impl SystemParams {
    /// Named parameter map, used for run metadata.
    pub fn to_map(&self) -> Vec<(String, f64)> {
        match self {
            SystemParams::Enzyme(p) => {
                let mut m = vec![("c_0".to_string(), p.c0)];
                for (i, v) in p.c.iter().enumerate() {
                    m.push((format!("c_{}", i + 1), *v));
                }
                for (i, v) in p.cap_c.iter().enumerate() {
                    m.push((format!("C_{}", i + 1), *v));
                }
                m.push(("ct_1".to_string(), p.tilde_c1));
                m.push(("ct_2".to_string(), p.tilde_c2));
                m
            }
            SystemParams::LotkaVolterra(p) => {
                let mut m = Vec::new();
                for (j, row) in p.alpha.iter().enumerate() {
                    for (i, v) in row.iter().enumerate() {
                        m.push((format!("alpha_{}_{}", i + 1, j + 1), *v));
                    }
                }
                m
            }
            SystemParams::None => Vec::new(),
        }
    }
}

/// A concrete dynamic system: which equations, their parameters, and the
/// shared initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub kind: SystemKind,
    pub dimension: usize,
    pub params: SystemParams,
    pub initial_state: Vec<f64>,
}

impl DynamicsSpec {
    pub fn enzyme(params: EnzymeParams, initial_state: [f64; 3]) -> Self {
        Self {
            kind: SystemKind::EnzymeNetwork,
            dimension: 3,
            params: SystemParams::Enzyme(params),
            initial_state: initial_state.to_vec(),
        }
    }

    pub fn lotka_volterra(params: LotkaVolterraParams, initial_state: [f64; 10]) -> Self {
        Self {
            kind: SystemKind::LotkaVolterra,
            dimension: 10,
            params: SystemParams::LotkaVolterra(params),
            initial_state: initial_state.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_state.len() != self.dimension {
            return Err(Error::InvalidConfig(format!(
                "initial state has {} components for dimension {}",
                self.initial_state.len(),
                self.dimension
            )));
        }
        match (&self.kind, &self.params) {
            (SystemKind::EnzymeNetwork, SystemParams::Enzyme(p)) => {
                if self.dimension != 3 {
                    return Err(Error::InvalidConfig("enzyme network has p = 3".into()));
                }
                if p.cap_c.iter().any(|&c| c <= 0.0) {
                    return Err(Error::InvalidConfig(
                        "Michaelis-Menten constants must be positive".into(),
                    ));
                }
                Ok(())
            }
            (SystemKind::LotkaVolterra, SystemParams::LotkaVolterra(p)) => {
                if self.dimension != 10 {
                    return Err(Error::InvalidConfig("Lotka-Volterra system has p = 10".into()));
                }
                if p.alpha.iter().flatten().any(|&a| a <= 0.0) {
                    return Err(Error::InvalidConfig(
                        "Lotka-Volterra rates must be positive".into(),
                    ));
                }
                Ok(())
            }
            (SystemKind::Custom, _) => Ok(()),
            _ => Err(Error::InvalidConfig(
                "system kind does not match parameter block".into(),
            )),
        }
    }

    /// Right-hand side of the system at state `x` and time `t`.
    pub fn rhs(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match &self.params {
            SystemParams::Enzyme(p) => enzyme_dynamics(p, x, t),
            SystemParams::LotkaVolterra(p) => lotka_volterra_dynamics(p, x, t),
            SystemParams::None => Err(Error::InvalidConfig(
                "custom dynamics have no built-in right-hand side".into(),
            )),
        }
    }
}

fn check_finite(x: &[f64], t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        Err(Error::NonFiniteState { t })
    } else {
        Ok(())
    }
}

const DENOM_FLOOR: f64 = 1e-12;

fn guarded_div(num: f64, den: f64, term: &'static str) -> Result<f64> {
    if den.abs() < DENOM_FLOOR {
        Err(Error::DegenerateDenominator { term, value: den })
    } else {
        Ok(num / den)
    }
}

/// Right-hand side of the three-node enzyme regulatory network.
pub fn enzyme_dynamics(p: &EnzymeParams, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_finite(x, t)?;
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    let d1 = p.c[0] * guarded_div(p.c0 * (1.0 - x1), (1.0 - x1) + p.cap_c[0], "(1-X1)+C1")?
        - p.tilde_c1 * p.c[1] * guarded_div(x1, x1 + p.cap_c[1], "X1+C2")?;
    let d2 = p.c[2] * guarded_div((1.0 - x2) * x3, (1.0 - x2) + p.cap_c[2], "(1-X2)+C3")?
        - p.tilde_c2 * p.c[3] * guarded_div(x2, x2 + p.cap_c[3], "X2+C4")?;
    let d3 = p.c[4] * guarded_div(x1 * (1.0 - x3), (1.0 - x3) + p.cap_c[4], "(1-X3)+C5")?
        - p.c[5] * guarded_div(x2 * x3, x3 + p.cap_c[5], "X3+C6")?;
    Ok(vec![d1, d2, d3])
}

/// Right-hand side of the ten-dimensional pairwise predator-prey system.
pub fn lotka_volterra_dynamics(p: &LotkaVolterraParams, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_finite(x, t)?;
    let mut d = vec![0.0; 10];
    for j in 0..5 {
        let [a1, a2, a3, a4] = p.alpha[j];
        let prey = x[2 * j];
        let pred = x[2 * j + 1];
        d[2 * j] = a1 * prey - a2 * prey * pred;
        d[2 * j + 1] = a3 * prey * pred - a4 * pred;
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Heterogeneity schedules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeterogeneityLevel {
    I,
    II,
    III,
}

impl HeterogeneityLevel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" | "I" | "i" => Ok(Self::I),
            "2" | "II" | "ii" => Ok(Self::II),
            "3" | "III" | "iii" => Ok(Self::III),
            other => Err(Error::UnknownLevel(other.to_string())),
        }
    }
}

impl std::fmt::Display for HeterogeneityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::I => write!(f, "I"),
            Self::II => write!(f, "II"),
            Self::III => write!(f, "III"),
        }
    }
}

/// Source-specific parameters under the published heterogeneity schedules.
/// `k` is the 1-based source index.
pub fn heterogeneity_params(
    kind: SystemKind,
    level: HeterogeneityLevel,
    k: usize,
    total_sources: usize,
) -> Result<SystemParams> {
    if k < 1 {
        return Err(Error::InvalidConfig("source index k starts at 1".into()));
    }
    // Generalization sources use index K+1, so k may exceed total_sources by one.
    if k > total_sources + 1 {
        return Err(Error::InvalidConfig(format!(
            "source index {k} out of range for K = {total_sources}"
        )));
    }
    let kf = k as f64;
    match kind {
        SystemKind::EnzymeNetwork => {
            let (g, ct2) = match level {
                HeterogeneityLevel::I => (1.0, 0.2),
                HeterogeneityLevel::II => (1.0 + kf / 40.0, 0.2 * (1.0 + kf / 40.0)),
                HeterogeneityLevel::III => (1.0 + kf / 20.0, 0.2 * (1.0 + kf / 5.0)),
            };
            Ok(SystemParams::Enzyme(EnzymeParams {
                c0: g,
                c: [10.0 * g, 10.0 * g, 10.0 * g, g, 10.0 * g, 10.0 * g],
                cap_c: [0.1 * g; 6],
                tilde_c1: g,
                tilde_c2: ct2,
            }))
        }
        SystemKind::LotkaVolterra => {
            let g = match level {
                HeterogeneityLevel::I => 1.0,
                HeterogeneityLevel::II => 1.0 + kf / 160.0,
                HeterogeneityLevel::III => 1.0 + kf / 80.0,
            };
            let mut alpha = [[0.0; 4]; 5];
            for (j, row) in alpha.iter_mut().enumerate() {
                let jf = j as f64;
                *row = [
                    (1.1 + 0.2 * jf) * g,
                    (0.4 + 0.2 * jf) * g,
                    (0.1 + 0.2 * jf) * g,
                    (0.4 + 0.2 * jf) * g,
                ];
            }
            Ok(SystemParams::LotkaVolterra(LotkaVolterraParams { alpha }))
        }
        SystemKind::Custom => Err(Error::InvalidConfig(
            "custom systems have no heterogeneity schedule".into(),
        )),
    }
}

/// Level I enzyme parameters (the base schedule).
pub fn enzyme_level_one() -> EnzymeParams {
    match heterogeneity_params(SystemKind::EnzymeNetwork, HeterogeneityLevel::I, 1, 1).unwrap() {
        SystemParams::Enzyme(p) => p,
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// Trajectory values and derivatives on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Integrated {
    /// n x p states at grid times
    pub states: Mat,
    /// n x p derivatives, re-evaluated from the dynamics at the grid states
    pub derivs: Mat,
}

const BLOWUP_LIMIT: f64 = 1e8;

/// Classical fixed-step RK4 over the grid, with `substeps` steps per grid
/// interval. Derivatives at grid times come from re-evaluating the dynamics
/// at the integrated state.
pub fn integrate<F>(mut f: F, x0: &[f64], grid: &TimeGrid, substeps: usize) -> Result<Integrated>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if substeps < 1 {
        return Err(Error::InvalidConfig("substeps must be >= 1".into()));
    }
    let p = x0.len();
    let n = grid.len();
    let times = grid.times();
    let mut states = Mat::zeros(n, p);
    let mut derivs = Mat::zeros(n, p);
    let mut x = x0.to_vec();

    let check_blowup = |x: &[f64], t: f64| -> Result<()> {
        let mag = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if mag > BLOWUP_LIMIT {
            Err(Error::BlowUp { t, magnitude: mag })
        } else {
            Ok(())
        }
    };

    for i in 0..n {
        let t = times[i];
        check_blowup(&x, t)?;
        let dx = f(&x, t)?;
        for j in 0..p {
            states.set(i, j, x[j]);
            derivs.set(i, j, dx[j]);
        }
        if i + 1 == n {
            break;
        }
        let h = (times[i + 1] - t) / substeps as f64;
        for s in 0..substeps {
            let ts = t + s as f64 * h;
            let k1 = f(&x, ts)?;
            let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
            let k2 = f(&x2, ts + 0.5 * h)?;
            let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
            let k3 = f(&x3, ts + 0.5 * h)?;
            let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
            let k4 = f(&x4, ts + h)?;
            for j in 0..p {
                x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            check_blowup(&x, ts + h)?;
        }
    }
    Ok(Integrated { states, derivs })
}

// ---------------------------------------------------------------------------
// Multi-source generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignCase {
    Stable,
    Unstable,
}

impl std::fmt::Display for DesignCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Stable => write!(f, "stable"),
            Self::Unstable => write!(f, "unstable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub kind: SystemKind,
    pub sources: usize,
    pub level: HeterogeneityLevel,
    pub case: DesignCase,
    pub noise_sd: f64,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl SimulationConfig {
    /// Benchmark defaults: published n, T, noise, and initial state for the
    /// given system.
    pub fn benchmark(
        kind: SystemKind,
        sources: usize,
        level: HeterogeneityLevel,
        case: DesignCase,
        seed: u64,
    ) -> Result<Self> {
        let (n, horizon, noise_sd) = kind
            .default_design()
            .ok_or_else(|| Error::InvalidConfig("custom systems have no default design".into()))?;
        Ok(Self {
            kind,
            sources,
            level,
            case,
            noise_sd,
            grid: TimeGrid::uniform(n, horizon)?,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources < 1 {
            return Err(Error::InvalidConfig("need at least one source".into()));
        }
        if self.case == DesignCase::Unstable && self.sources < 2 {
            return Err(Error::InvalidConfig("unstable design needs K >= 2".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig("noise sd must be >= 0".into()));
        }
        if self.grid.first() != 0.0 {
            return Err(Error::InvalidConfig("simulation grid must start at 0".into()));
        }
        Ok(())
    }

    /// Substep count matching the integrator design target.
    pub fn substeps(&self) -> usize {
        let target = self.kind.substep_target();
        ((self.grid.max_spacing() / target).ceil() as usize).max(1)
    }
}

/// One observed source: a noisy p-dimensional signal on its own grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSeries {
    pub grid: TimeGrid,
    /// n x p observations
    pub y: Mat,
    /// optional per-row trial labels (external data)
    pub trials: Option<Vec<u64>>,
    pub name: Option<String>,
}

/// Noise-free states and derivatives of one source (simulation only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSeries {
    pub states: Mat,
    pub derivs: Mat,
}

/// K sources of observations, with latent truth retained when simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceObservations {
    pub sources: Vec<SourceSeries>,
    pub latent: Option<Vec<LatentSeries>>,
    /// simplex weights defining source K in the unstable design
    pub combo_weights: Option<Vec<f64>>,
    pub config: Option<SimulationConfig>,
}

impl SourceObservations {
    pub fn k(&self) -> usize {
        self.sources.len()
    }

    pub fn dim(&self) -> Result<usize> {
        let p = self.sources[0].y.cols();
        if self.sources.iter().any(|s| s.y.cols() != p) {
            return Err(Error::GridMismatch(
                "sources disagree on signal dimension".into(),
            ));
        }
        Ok(p)
    }

    /// The common grid when every source shares one.
    pub fn shared_grid(&self) -> Option<&TimeGrid> {
        let g = &self.sources[0].grid;
        if self.sources.iter().all(|s| s.grid.approx_eq(g, 0.0)) {
            Some(g)
        } else {
            None
        }
    }
}

fn integrate_schedule(config: &SimulationConfig, k: usize) -> Result<Integrated> {
    let params = heterogeneity_params(config.kind, config.level, k, config.sources)?;
    let x0 = config
        .kind
        .default_initial_state()
        .ok_or_else(|| Error::InvalidConfig("custom systems need explicit dynamics".into()))?;
    let spec = DynamicsSpec {
        kind: config.kind,
        dimension: x0.len(),
        params,
        initial_state: x0.clone(),
    };
    spec.validate()?;
    integrate(|x, t| spec.rhs(x, t), &x0, &config.grid, config.substeps())
}

fn add_noise(config: &SimulationConfig, k: usize, states: &Mat) -> Mat {
    let mut rng = rng::stream(config.seed, STREAM_NOISE_BASE + k as u64);
    let mut y = states.clone();
    for i in 0..y.rows() {
        for j in 0..y.cols() {
            let noisy = y.get(i, j) + config.noise_sd * standard_normal(&mut rng);
            y.set(i, j, noisy);
        }
    }
    y
}

/// Generate K noisy sources. In the stable case every source follows its own
/// schedule parameters; in the unstable case source K's latent system is a
/// convex combination (uniform on the simplex) of sources 1..K-1, and its
/// observations are that combined latent trajectory plus fresh noise.
pub fn generate_sources(config: &SimulationConfig) -> Result<SourceObservations> {
    config.validate()?;
    let k_total = config.sources;
    let scheduled = match config.case {
        DesignCase::Stable => k_total,
        DesignCase::Unstable => k_total - 1,
    };
    let mut latent: Vec<LatentSeries> = Vec::with_capacity(k_total);
    for k in 1..=scheduled {
        let out = integrate_schedule(config, k)?;
        latent.push(LatentSeries {
            states: out.states,
            derivs: out.derivs,
        });
    }
    let mut combo_weights = None;
    if config.case == DesignCase::Unstable {
        let mut combo_rng = rng::stream(config.seed, STREAM_COMBO);
        let w = simplex_uniform(&mut combo_rng, k_total - 1);
        let n = config.grid.len();
        let p = latent[0].states.cols();
        let mut states = Mat::zeros(n, p);
        let mut derivs = Mat::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                let mut s = 0.0;
                let mut d = 0.0;
                for (src, wk) in latent.iter().zip(&w) {
                    s += wk * src.states.get(i, j);
                    d += wk * src.derivs.get(i, j);
                }
                states.set(i, j, s);
                derivs.set(i, j, d);
            }
        }
        latent.push(LatentSeries { states, derivs });
        combo_weights = Some(w);
    }
    let sources = latent
        .iter()
        .enumerate()
        .map(|(idx, l)| SourceSeries {
            grid: config.grid.clone(),
            y: add_noise(config, idx + 1, &l.states),
            trials: None,
            name: Some(format!("source_{}", idx + 1)),
        })
        .collect();
    Ok(SourceObservations {
        sources,
        latent: Some(latent),
        combo_weights,
        config: Some(config.clone()),
    })
}

/// Generate the scheduled source with 1-based index `k_index` (noise stream
/// keyed by the index, so a held-out source K+1 is independent of the
/// training sources).
pub fn generate_schedule_source(
    config: &SimulationConfig,
    k_index: usize,
) -> Result<(SourceSeries, LatentSeries)> {
    let out = integrate_schedule(config, k_index)?;
    let latent = LatentSeries {
        states: out.states,
        derivs: out.derivs,
    };
    let series = SourceSeries {
        grid: config.grid.clone(),
        y: add_noise(config, k_index, &latent.states),
        trials: None,
        name: Some(format!("source_{k_index}")),
    };
    Ok((series, latent))
}
