//! Backward-Euler reference solver.

use crate::discretization::LtiSystem;
use crate::error::{EmError, Result};
use crate::sparse::SparseLu;
use crate::trajectory::{SolverTag, StressTrajectory, TimeGrid};

/// Implicit Euler time stepper holding the current state. The factorization
/// of `I − h·A` is reused until the step size changes.
pub struct BackwardEulerStepper<'a> {
    sys: &'a LtiSystem,
    lu: Option<(f64, SparseLu)>,
    x: Vec<f64>,
    b: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
    factorizations: usize,
}

impl<'a> BackwardEulerStepper<'a> {
    pub fn new(sys: &'a LtiSystem) -> Self {
        let n = sys.n();
        Self {
            sys,
            lu: None,
            x: sys.x0.clone(),
            b: sys.drive(),
            rhs: vec![0.0; n],
            work: vec![0.0; n],
            factorizations: 0,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn step(&mut self, h: f64) -> Result<()> {
        let stale = match &self.lu {
            Some((h_old, _)) => (h - h_old).abs() > 1e-12 * h_old.abs(),
            None => true,
        };
        if stale {
            let lu = self.sys.factor(-h, 1.0).map_err(|e| {
                EmError::Numerical(format!("I - h·A is singular for h = {h:e}: {e}"))
            })?;
            self.lu = Some((h, lu));
            self.factorizations += 1;
        }
        for ((r, &x), &b) in self.rhs.iter_mut().zip(&self.x).zip(&self.b) {
            *r = x + h * b;
        }
        let (_, lu) = self.lu.as_ref().unwrap();
        lu.solve_into(&self.rhs, &mut self.x, &mut self.work);
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(EmError::Numerical("backward Euler produced non-finite stress".into()));
        }
        Ok(())
    }
}

/// Backward Euler on every interval of `grid`, storing the full state.
pub fn backward_euler(sys: &LtiSystem, grid: &TimeGrid) -> Result<StressTrajectory> {
    backward_euler_substepped(sys, grid, 1)
}

/// Backward Euler with `substeps` equal inner steps per grid interval.
pub fn backward_euler_substepped(
    sys: &LtiSystem,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<StressTrajectory> {
    if substeps == 0 {
        return Err(EmError::Parameter("substeps must be at least 1".into()));
    }
    let times = grid.times();
    let mut stepper = BackwardEulerStepper::new(sys);
    let mut states = Vec::with_capacity(times.len());
    states.push(sys.x0.clone());
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for _ in 0..substeps {
            stepper.step(h)?;
        }
        states.push(stepper.state().to_vec());
    }
    Ok(StressTrajectory {
        times: times.to_vec(),
        states,
        residual_rel: None,
        solver: SolverTag::Fdm,
        rows: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble_nucleation, drive_force};
    use crate::tree::{InterconnectTree, MaterialParams, SegmentSpec};

    const UM: f64 = 1e-6;

    fn wire(j: f64) -> InterconnectTree {
        InterconnectTree::grow(&[SegmentSpec::new(0, 10.0 * UM, 0.5 * UM, 0.2 * UM, j)], MaterialParams::default())
            .unwrap()
    }

    #[test]
    fn equilibrium_stays_zero() {
        let sys = assemble_nucleation(&wire(0.0), 11).unwrap();
        let traj = backward_euler(&sys, &TimeGrid::uniform(100.0, 10).unwrap()).unwrap();
        assert!(traj.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_state_is_preserved() {
        let sys = assemble_nucleation(&wire(0.0), 11).unwrap();
        let sys = sys.clone().with_x0(vec![2.5e7; sys.n()]);
        let traj = backward_euler(&sys, &TimeGrid::uniform(1e4, 20).unwrap()).unwrap();
        for s in &traj.states {
            assert!(s.iter().all(|&v| (v - 2.5e7).abs() <= 1e-6));
        }
    }

    #[test]
    fn factorization_reused_for_uniform_steps() {
        let sys = assemble_nucleation(&wire(1e10), 11).unwrap();
        let mut st = BackwardEulerStepper::new(&sys);
        for _ in 0..5 {
            st.step(10.0).unwrap();
        }
        st.step(20.0).unwrap();
        assert_eq!(st.factorizations(), 2);
    }

    #[test]
    fn long_time_matches_linear_steady_profile() {
        let t = wire(1e10);
        let sys = assemble_nucleation(&t, 11).unwrap();
        let kappa = crate::discretization::diffusivity(&t.segments()[0], t.materials());
        let tau = (10.0 * UM).powi(2) / (std::f64::consts::PI.powi(2) * kappa);
        let traj = backward_euler(&sys, &TimeGrid::uniform(100.0 * tau, 200).unwrap()).unwrap();
        let g = drive_force(&t.segments()[0], t.materials());
        let end = g * 10.0 * UM / 2.0;
        let last = traj.last_state();
        assert!((last[0] - end).abs() <= 0.01 * end);
        assert!((last[1] + end).abs() <= 0.01 * end);
    }
}
