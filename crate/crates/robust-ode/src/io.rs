//! CSV and JSON interchange formats.
//!
//! CSV layouts:
//! - observations: `t,Y_1,...,Y_p` (optional trailing `trial` column)
//! - latent truth: `t,X_1..X_p,D_1..D_p`
//! - smoothed/robust trajectories: `t,xhat_1..p,dhat_1..p,sigma_1..p`
//! - intervals: `t,dim,xhat,lo,hi,sigma`
//!
//! Floats are printed with 17 significant digits so every file round-trips
//! bit-exactly.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::GammaMatrix;
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::ode::{LatentSeries, SourceSeries};
use crate::robust::{ConfidenceBand, RobustTrajectory};
use crate::smoothing::SmoothedSource;

/// 17 significant digits: enough for exact f64 round-trips.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(content.as_bytes()).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Observation CSVs
// ---------------------------------------------------------------------------

pub fn write_source_csv(path: &Path, series: &SourceSeries) -> Result<()> {
    let p = series.y.cols();
    let mut out = String::from("t");
    for j in 1..=p {
        out.push_str(&format!(",Y_{j}"));
    }
    if series.trials.is_some() {
        out.push_str(",trial");
    }
    out.push('\n');
    for (i, &t) in series.grid.times().iter().enumerate() {
        out.push_str(&format_float(t));
        for j in 0..p {
            out.push(',');
            out.push_str(&format_float(series.y.get(i, j)));
        }
        if let Some(trials) = &series.trials {
            out.push_str(&format!(",{}", trials[i]));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn write_latent_csv(path: &Path, grid: &TimeGrid, latent: &LatentSeries) -> Result<()> {
    let p = latent.states.cols();
    let mut out = String::from("t");
    for j in 1..=p {
        out.push_str(&format!(",X_{j}"));
    }
    for j in 1..=p {
        out.push_str(&format!(",D_{j}"));
    }
    out.push('\n');
    for (i, &t) in grid.times().iter().enumerate() {
        out.push_str(&format_float(t));
        for j in 0..p {
            out.push(',');
            out.push_str(&format_float(latent.states.get(i, j)));
        }
        for j in 0..p {
            out.push(',');
            out.push_str(&format_float(latent.derivs.get(i, j)));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Read one observation CSV with header `t,Y_1..Y_p[,trial]`.
pub fn read_source_csv(path: &Path) -> Result<SourceSeries> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: display.clone(),
            detail: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: display.clone(),
            detail: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.first() != Some(&"t") {
        return Err(Error::HeaderMismatch {
            path: display,
            detail: format!("first column must be `t`, got `{}`", cols.first().unwrap_or(&"")),
        });
    }
    let has_trial = cols.last() == Some(&"trial");
    let p = cols.len() - 1 - usize::from(has_trial);
    if p == 0 {
        return Err(Error::HeaderMismatch {
            path: display,
            detail: "no signal columns".into(),
        });
    }
    for (j, name) in cols[1..1 + p].iter().enumerate() {
        let want = format!("Y_{}", j + 1);
        if *name != want {
            return Err(Error::HeaderMismatch {
                path: display,
                detail: format!("expected column `{want}`, got `{name}`"),
            });
        }
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: display.clone(),
            detail: e.to_string(),
        })?;
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Csv {
                path: display.clone(),
                detail: format!("row {}: bad {what} `{s}`", row_idx + 2),
            })
        };
        let t = parse(&record[0], "time")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::NonMonotoneTime {
                    path: display,
                    row: row_idx + 2,
                });
            }
        }
        times.push(t);
        let mut row = Vec::with_capacity(p);
        for j in 0..p {
            row.push(parse(&record[1 + j], "value")?);
        }
        rows.push(row);
        if has_trial {
            let s = &record[1 + p];
            trials.push(s.parse::<u64>().map_err(|_| Error::Csv {
                path: display.clone(),
                detail: format!("row {}: bad trial id `{s}`", row_idx + 2),
            })?);
        }
    }
    let grid = TimeGrid::from_times(times)?;
    Ok(SourceSeries {
        grid,
        y: Mat::from_rows(rows)?,
        trials: if has_trial { Some(trials) } else { None },
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned()),
    })
}

/// Read every `*.csv` in a directory as one subject each, sorted by file
/// name. All subjects must agree on the signal dimension.
pub fn ingest_multisubject_csv(dir: &Path) -> Result<Vec<SourceSeries>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no .csv files found in {}",
            dir.display()
        )));
    }
    let mut subjects = Vec::new();
    for path in &paths {
        let s = read_source_csv(path)?;
        if let Some(first) = subjects.first() {
            let first: &SourceSeries = first;
            if s.y.cols() != first.y.cols() {
                return Err(Error::HeaderMismatch {
                    path: path.display().to_string(),
                    detail: format!(
                        "subject has p = {} columns but previous subjects have p = {}",
                        s.y.cols(),
                        first.y.cols()
                    ),
                });
            }
        }
        subjects.push(s);
    }
    Ok(subjects)
}

// ---------------------------------------------------------------------------
// Trajectory CSVs
// ---------------------------------------------------------------------------

fn write_trajectory_table(
    path: &Path,
    grid: &TimeGrid,
    x: &Mat,
    d: &Mat,
    sigma: &Mat,
) -> Result<()> {
    let p = x.cols();
    let mut out = String::from("t");
    for j in 1..=p {
        out.push_str(&format!(",xhat_{j}"));
    }
    for j in 1..=p {
        out.push_str(&format!(",dhat_{j}"));
    }
    for j in 1..=p {
        out.push_str(&format!(",sigma_{j}"));
    }
    out.push('\n');
    for (i, &t) in grid.times().iter().enumerate() {
        out.push_str(&format_float(t));
        for m in [x, d, sigma] {
            for j in 0..p {
                out.push(',');
                out.push_str(&format_float(m.get(i, j)));
            }
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn write_smoothed_csv(path: &Path, sm: &SmoothedSource) -> Result<()> {
    write_trajectory_table(path, &sm.eval_grid, &sm.x_hat, &sm.d_hat, &sm.sigma_hat)
}

pub fn write_robust_csv(path: &Path, traj: &RobustTrajectory) -> Result<()> {
    write_trajectory_table(
        path,
        &traj.eval_grid,
        &traj.x_robust,
        &traj.d_robust,
        &traj.sigma_robust,
    )
}

/// A trajectory table read back from disk: grid plus the three arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub grid: TimeGrid,
    pub x: Mat,
    pub d: Mat,
    pub sigma: Mat,
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryTable> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: display.clone(),
            detail: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: display.clone(),
            detail: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.first() != Some(&"t") || (cols.len() - 1) % 3 != 0 {
        return Err(Error::HeaderMismatch {
            path: display,
            detail: "expected header t,xhat_1..p,dhat_1..p,sigma_1..p".into(),
        });
    }
    let p = (cols.len() - 1) / 3;
    for j in 0..p {
        let expect = [
            format!("xhat_{}", j + 1),
            format!("dhat_{}", j + 1),
            format!("sigma_{}", j + 1),
        ];
        for (block, want) in expect.iter().enumerate() {
            let got = cols[1 + block * p + j];
            if got != want {
                return Err(Error::HeaderMismatch {
                    path: display,
                    detail: format!("expected column `{want}`, got `{got}`"),
                });
            }
        }
    }
    let mut times = Vec::new();
    let mut x = Vec::new();
    let mut d = Vec::new();
    let mut sigma = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: display.clone(),
            detail: e.to_string(),
        })?;
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Csv {
                path: display.clone(),
                detail: format!("row {}: bad value `{s}`", row_idx + 2),
            })
        };
        let t = parse(&record[0])?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::NonMonotoneTime {
                    path: display,
                    row: row_idx + 2,
                });
            }
        }
        times.push(t);
        let mut row_x = Vec::with_capacity(p);
        let mut row_d = Vec::with_capacity(p);
        let mut row_s = Vec::with_capacity(p);
        for j in 0..p {
            row_x.push(parse(&record[1 + j])?);
            row_d.push(parse(&record[1 + p + j])?);
            row_s.push(parse(&record[1 + 2 * p + j])?);
        }
        x.push(row_x);
        d.push(row_d);
        sigma.push(row_s);
    }
    Ok(TrajectoryTable {
        grid: TimeGrid::from_times(times)?,
        x: Mat::from_rows(x)?,
        d: Mat::from_rows(d)?,
        sigma: Mat::from_rows(sigma)?,
    })
}

/// Long-format interval table `t,dim,xhat,lo,hi,sigma`.
pub fn write_intervals_csv(
    path: &Path,
    traj: &RobustTrajectory,
    band: &ConfidenceBand,
) -> Result<()> {
    let mut out = String::from("t,dim,xhat,lo,hi,sigma\n");
    for (i, &t) in traj.eval_grid.times().iter().enumerate() {
        for j in 0..traj.x_robust.cols() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_float(t),
                j + 1,
                format_float(traj.x_robust.get(i, j)),
                format_float(band.lower.get(i, j)),
                format_float(band.upper.get(i, j)),
                format_float(traj.sigma_robust.get(i, j)),
            ));
        }
    }
    write_file(path, &out)
}

// ---------------------------------------------------------------------------
// JSON artifacts
// ---------------------------------------------------------------------------

/// Gram matrix artifact with optional split-sample halves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaArtifact {
    pub k: usize,
    pub entries: Vec<Vec<f64>>,
    pub quad_rule: String,
    pub trim: f64,
    pub min_eig_raw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_half1: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_half2: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
}

impl GammaArtifact {
    pub fn new(gamma: &GammaMatrix) -> Self {
        let nested = (0..gamma.k)
            .map(|i| (0..gamma.k).map(|j| gamma.get(i, j)).collect())
            .collect();
        Self {
            k: gamma.k,
            entries: nested,
            quad_rule: gamma.quad_rule.clone(),
            trim: gamma.trim,
            min_eig_raw: gamma.min_eig_raw,
            split_half1: None,
            split_half2: None,
            n_obs: None,
        }
    }

    pub fn with_split(mut self, g1: &GammaMatrix, g2: &GammaMatrix, n_obs: usize) -> Self {
        let nest = |g: &GammaMatrix| {
            (0..g.k)
                .map(|i| (0..g.k).map(|j| g.get(i, j)).collect())
                .collect()
        };
        self.split_half1 = Some(nest(g1));
        self.split_half2 = Some(nest(g2));
        self.n_obs = Some(n_obs);
        self
    }

    pub fn gamma(&self) -> Result<GammaMatrix> {
        let entries: Vec<f64> = self.entries.iter().flatten().copied().collect();
        let mut g = GammaMatrix::from_entries(entries, self.k, self.trim)?;
        g.quad_rule = self.quad_rule.clone();
        g.min_eig_raw = self.min_eig_raw;
        Ok(g)
    }

    pub fn split(&self) -> Result<Option<(GammaMatrix, GammaMatrix, usize)>> {
        match (&self.split_half1, &self.split_half2, self.n_obs) {
            (Some(h1), Some(h2), Some(n)) => {
                let g1 = GammaMatrix::from_entries(
                    h1.iter().flatten().copied().collect(),
                    self.k,
                    self.trim,
                )?;
                let g2 = GammaMatrix::from_entries(
                    h2.iter().flatten().copied().collect(),
                    self.k,
                    self.trim,
                )?;
                Ok(Some((g1, g2, n)))
            }
            _ => Ok(None),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_file(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
