use serde::{Deserialize, Serialize};

use crate::error::{EmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverTag {
    Fdm,
    ExtRakrylov,
    EiRakrylov,
}

impl SolverTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverTag::Fdm => "fdm",
            SolverTag::ExtRakrylov => "ext-rakrylov",
            SolverTag::EiRakrylov => "ei-rakrylov",
        }
    }
}

/// Stress snapshots on a time grid.
///
/// `rows` is `None` when states hold every grid unknown, otherwise it lists
/// the grid indices stored in each state (probe output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub residual_rel: Option<Vec<f64>>,
    pub solver: SolverTag,
    pub rows: Option<Vec<usize>>,
}

impl StressTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Column of a stored row (position within `states[k]`).
    pub fn series(&self, column: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[column]).collect()
    }

    /// Column holding grid index `row`, if stored.
    pub fn column_of(&self, row: usize) -> Option<usize> {
        match &self.rows {
            None => Some(row),
            Some(rows) => rows.iter().position(|&r| r == row),
        }
    }
}

/// Sample times for a transient run, always starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    /// `steps` equal intervals on [0, t_end].
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if steps < 1 || !(t_end.is_finite() && t_end > 0.0) {
            return Err(EmError::Parameter(format!(
                "uniform grid needs t_end > 0 and at least one step (t_end = {t_end}, steps = {steps})"
            )));
        }
        let h = t_end / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
        times[steps] = t_end;
        Ok(Self(times))
    }

    /// 0 followed by `steps` geometrically spaced points from `t_first` to `t_end`.
    pub fn geometric(t_first: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps < 1 || !(t_first > 0.0 && t_end > t_first && t_end.is_finite()) {
            return Err(EmError::Parameter(format!(
                "geometric grid needs 0 < t_first < t_end and steps ≥ 1 (got {t_first}, {t_end}, {steps})"
            )));
        }
        let mut times = vec![0.0];
        if steps == 1 {
            times.push(t_end);
        } else {
            let ratio = (t_end / t_first).powf(1.0 / (steps - 1) as f64);
            for k in 0..steps {
                times.push(t_first * ratio.powi(k as i32));
            }
            times[steps] = t_end;
        }
        Self::from_times(times)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        validate_times(&times)?;
        Ok(Self(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len() - 1
    }

    pub fn end(&self) -> f64 {
        *self.0.last().unwrap()
    }

    /// Whether all steps share one size (to 1e-12 relative).
    pub fn is_uniform(&self) -> bool {
        let h0 = self.0[1] - self.0[0];
        self.0.windows(2).all(|w| ((w[1] - w[0]) - h0).abs() <= 1e-12 * h0)
    }
}

pub(crate) fn validate_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(EmError::Parameter("time grid needs at least two points".into()));
    }
    if times[0] != 0.0 {
        return Err(EmError::Parameter(format!("time grid must start at 0, starts at {}", times[0])));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) || !w[1].is_finite() {
            return Err(EmError::Parameter(format!(
                "time grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = TimeGrid::uniform(10.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 2.5, 5.0, 7.5, 10.0]);
        assert!(g.is_uniform());
        assert!(TimeGrid::uniform(0.0, 3).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
    }

    #[test]
    fn geometric_grid() {
        let g = TimeGrid::geometric(1.0, 1000.0, 4).unwrap();
        let t = g.times();
        assert_eq!(t.len(), 5);
        assert_eq!(t[0], 0.0);
        assert!((t[2] - 10.0).abs() < 1e-12);
        assert_eq!(t[4], 1000.0);
        assert!(!g.is_uniform());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::from_times(vec![0.0]).is_err());
        assert!(TimeGrid::from_times(vec![1.0, 2.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.0, 2.0, 2.0]).is_err());
    }
}
