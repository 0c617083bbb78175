//! Time grids for observations and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered set of time points in `[0, T]`.
///
/// Observation grids start at 0 by construction (`new`, `uniform`). Grids
/// obtained by splitting or ingested from external data may start later;
/// those go through [`TimeGrid::from_times`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    horizon: f64,
}

impl TimeGrid {
    /// Strict constructor: strictly increasing, first point 0, last ≤ horizon.
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self> {
        let grid = Self::from_times_with_horizon(times, horizon)?;
        if grid.times[0] != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "observation grid must start at 0, got {}",
                grid.times[0]
            )));
        }
        Ok(grid)
    }

    /// Uniform grid of `n` points over `[0, horizon]`, both endpoints included.
    pub fn uniform(n: usize, horizon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("grid needs n >= 2, got {n}")));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let step = horizon / (n - 1) as f64;
        let times = (0..n).map(|i| i as f64 * step).collect();
        Self::new(times, horizon)
    }

    /// Lenient constructor for sub-grids and ingested data: strictly
    /// increasing and nonnegative, horizon taken as the last point.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let horizon = *times.last().ok_or_else(|| {
            Error::InvalidConfig("empty time grid".into())
        })?;
        Self::from_times_with_horizon(times, horizon)
    }

    fn from_times_with_horizon(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid needs n >= 2, got {}",
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || !horizon.is_finite() {
            return Err(Error::InvalidConfig("non-finite time point".into()));
        }
        if times[0] < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "time points must be nonnegative, got {}",
                times[0]
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "time points must be strictly increasing".into(),
            ));
        }
        let last = *times.last().unwrap();
        if last > horizon * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "last time point {last} exceeds horizon {horizon}"
            )));
        }
        Ok(Self { times, horizon })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Length of the observed window, `last - first`.
    pub fn span(&self) -> f64 {
        self.last() - self.first()
    }

    pub fn max_spacing(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Sub-grid at the given (sorted) index positions.
    pub fn subgrid(&self, indices: &[usize]) -> Result<Self> {
        let times: Vec<f64> = indices.iter().map(|&i| self.times[i]).collect();
        Self::from_times_with_horizon(times, self.horizon)
    }

    /// True when both grids hold the same time points to within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.times.len() == other.times.len()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_covers_both_endpoints() {
        let g = TimeGrid::uniform(5, 2.0).unwrap();
        assert_eq!(g.times(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.span(), 2.0);
    }

    #[test]
    fn strict_constructor_rejects_nonzero_start() {
        assert!(TimeGrid::new(vec![0.1, 0.2], 1.0).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.2], 1.0).is_ok());
    }

    #[test]
    fn rejects_non_increasing_times() {
        assert!(TimeGrid::from_times(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_times(vec![0.0, 0.5, 0.4]).is_err());
        assert!(TimeGrid::from_times(vec![0.0]).is_err());
    }

    #[test]
    fn subgrid_keeps_horizon() {
        let g = TimeGrid::uniform(6, 1.0).unwrap();
        let h = g.subgrid(&[1, 3, 5]).unwrap();
        assert_eq!(h.times(), &[g.times()[1], g.times()[3], g.times()[5]]);
        assert_eq!(h.horizon(), 1.0);
    }
}
