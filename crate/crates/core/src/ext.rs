//! Frequency-domain reduction by the extended rational Arnoldi process and
//! transient simulation of the reduced model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{dot, LtiSystem};
use crate::error::{EmError, Result};
use crate::expm::small_matrix_exp;
use crate::krylov::{combine, norm2, orthogonalize, BREAKDOWN_TOLERANCE};
use crate::trajectory::{validate_times, SolverTag, StressTrajectory, TimeGrid};

/// Congruence-projected model A_h = VᵀAV, B_h = VᵀB, x̂0 = Vᵀx0.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub v: Vec<Vec<f64>>,
    pub a_h: DMatrix<f64>,
    pub b_h: DMatrix<f64>,
    pub x0_h: DVector<f64>,
    /// Drive magnitudes the model was built for.
    pub u: Vec<f64>,
    pub shift: f64,
    pub order_requested: usize,
    /// Diagnostic Hessenberg coefficients, (k+1)×k.
    pub h: DMatrix<f64>,
}

impl ReducedModel {
    pub fn order(&self) -> usize {
        self.v.len()
    }

    /// Reduced constant drive B_h·u.
    pub fn drive(&self) -> DVector<f64> {
        &self.b_h * DVector::from_column_slice(&self.u)
    }

    /// V·x̂.
    pub fn expand(&self, xh: &DVector<f64>) -> Vec<f64> {
        combine(&self.v, xh.as_slice())
    }

    /// Rows `rows` of V·x̂ only.
    pub fn expand_rows(&self, xh: &DVector<f64>, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&r| self.v.iter().zip(xh.iter()).map(|(c, y)| c[r] * y).sum())
            .collect()
    }
}

/// Time stepping used inside the reduced space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReducedIntegrator {
    /// Implicit Euler with one dense factorization per step size.
    BackwardEuler,
    /// Exact propagation of the piecewise-constant-input system.
    Exponential,
}

/// Reduction around shift σ ≥ 0 (σ = 0 is the plain extended Krylov mode).
pub fn extended_rational_arnoldi(sys: &LtiSystem, sigma: f64, q: usize, x0: &[f64]) -> Result<ReducedModel> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(EmError::Parameter(format!("shift must be finite and nonnegative, got {sigma}")));
    }
    if q < 2 {
        return Err(EmError::Parameter(format!("reduction order must be at least 2, got {q}")));
    }
    if x0.len() != sys.n() {
        return Err(EmError::Parameter("initial state length does not match the system".into()));
    }
    let n = sys.n();
    let q_eff = q.min(n);
    let solver = sys.shift_invert(sigma)?;

    let b = sys.drive();
    let r1: Vec<f64> = solver.solve(&b).into_iter().map(|x| -x).collect();
    let nrm = norm2(&r1);
    if !(nrm > 0.0) {
        return Err(EmError::DegenerateInput("reduction seed (A − σI)⁻¹·B·u is zero".into()));
    }
    let mut v = vec![r1.iter().map(|x| x / nrm).collect::<Vec<f64>>()];
    let mut h = DMatrix::zeros(q_eff + 1, q_eff);
    h[(0, 0)] = nrm;

    for j in 1..q_eff {
        // Second moment (A − σI)⁻¹(m₀ − x0) with the unnormalized first
        // moment m₀ = r1; a unit-norm v1 would vanish next to x0.
        let mut w = if j == 1 && sigma != 0.0 {
            let d: Vec<f64> = r1.iter().zip(x0).map(|(a, b)| a - b).collect();
            solver.solve(&d)
        } else {
            solver.solve(&v[j - 1])
        };
        let raw = norm2(&w);
        let (coeffs, norm) = orthogonalize(&v, &mut w);
        for (i, c) in coeffs.into_iter().enumerate() {
            h[(i, j)] = c;
        }
        if !(norm > BREAKDOWN_TOLERANCE * raw) {
            break;
        }
        h[(j + 1, j)] = norm;
        v.push(w.into_iter().map(|x| x / norm).collect());
    }
    let k = v.len();

    let av: Vec<Vec<f64>> = v.iter().map(|c| sys.a.mul_vec(c)).collect();
    let a_h = DMatrix::from_fn(k, k, |i, j| dot(&v[i], &av[j]));
    let mut b_h = DMatrix::zeros(k, sys.n_inputs());
    for (s, col) in sys.b_columns.iter().enumerate() {
        for &(row, coef) in col {
            for i in 0..k {
                b_h[(i, s)] += v[i][row] * coef;
            }
        }
    }
    let x0_h = DVector::from_iterator(k, v.iter().map(|c| dot(c, x0)));
    Ok(ReducedModel {
        v,
        a_h,
        b_h,
        x0_h,
        u: sys.u.clone(),
        shift: sigma,
        order_requested: q,
        h: h.view((0, 0), (k + 1, k)).into_owned(),
    })
}

/// Propagator for x̂' = Â·x̂ + b̂ with a constant drive.
pub struct ReducedPropagator {
    a: DMatrix<f64>,
    b: DVector<f64>,
    integrator: ReducedIntegrator,
    cached: Option<(f64, DMatrix<f64>, DVector<f64>)>,
}

impl ReducedPropagator {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, integrator: ReducedIntegrator) -> Self {
        Self { a, b, integrator, cached: None }
    }

    pub fn for_model(model: &ReducedModel, integrator: ReducedIntegrator) -> Self {
        Self::new(model.a_h.clone(), model.drive(), integrator)
    }

    /// (Φ, γ) with x̂(t+h) = Φ·x̂(t) + γ.
    fn operators(&self, h: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let k = self.a.nrows();
        match self.integrator {
            ReducedIntegrator::Exponential => {
                let e = small_matrix_exp(&self.augmented(), h)?;
                Ok((e.view((0, 0), (k, k)).into_owned(), e.view((0, k), (k, 1)).column(0).into_owned()))
            }
            ReducedIntegrator::BackwardEuler => {
                let m = DMatrix::identity(k, k) - &self.a * h;
                let lu = m.lu();
                let phi = lu
                    .solve(&DMatrix::identity(k, k))
                    .ok_or_else(|| EmError::Numerical("reduced I − h·A_h is singular".into()))?;
                let gamma = &phi * (&self.b * h);
                Ok((phi, gamma))
            }
        }
    }

    fn augmented(&self) -> DMatrix<f64> {
        let k = self.a.nrows();
        let mut m = DMatrix::zeros(k + 1, k + 1);
        m.view_mut((0, 0), (k, k)).copy_from(&self.a);
        m.view_mut((0, k), (k, 1)).copy_from(&self.b);
        m
    }

    /// Advance `x` by one step of size `h`, reusing operators for repeated h.
    pub fn step(&mut self, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        let fresh = match &self.cached {
            Some((h_old, _, _)) => (h - h_old).abs() > 1e-12 * h_old.abs(),
            None => true,
        };
        if fresh {
            let (phi, gamma) = self.operators(h)?;
            self.cached = Some((h, phi, gamma));
        }
        let (_, phi, gamma) = self.cached.as_ref().unwrap();
        Ok(phi * x + gamma)
    }

    /// Exact state at time `t` from `x0` (exponential integrator only).
    pub fn evaluate(&self, x0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if t == 0.0 {
            return Ok(x0.clone());
        }
        let k = self.a.nrows();
        let e = small_matrix_exp(&self.augmented(), t)?;
        let mut z = DVector::zeros(k + 1);
        z.rows_mut(0, k).copy_from(x0);
        z[k] = 1.0;
        Ok((e * z).rows(0, k).into_owned())
    }
}

/// Backward Euler in the reduced space, recovered as V·x̂ on every grid time.
pub fn reduced_transient(model: &ReducedModel, sys: &LtiSystem, grid: &TimeGrid) -> Result<StressTrajectory> {
    reduced_transient_with(model, sys, grid.times(), ReducedIntegrator::BackwardEuler, None)
}

/// Reduced transient with a chosen integrator; `rows` restricts recovery to
/// selected grid indices.
pub fn reduced_transient_with(
    model: &ReducedModel,
    sys: &LtiSystem,
    times: &[f64],
    integrator: ReducedIntegrator,
    rows: Option<&[usize]>,
) -> Result<StressTrajectory> {
    validate_times(times)?;
    if model.v.first().map_or(0, Vec::len) != sys.n() {
        return Err(EmError::Parameter("reduced model does not belong to this system".into()));
    }
    let mut prop = ReducedPropagator::for_model(model, integrator);
    let recover = |x: &DVector<f64>| match rows {
        Some(r) => model.expand_rows(x, r),
        None => model.expand(x),
    };
    let mut x = model.x0_h.clone();
    let mut states = Vec::with_capacity(times.len());
    states.push(recover(&x));
    for w in times.windows(2) {
        x = prop.step(&x, w[1] - w[0])?;
        states.push(recover(&x));
    }
    Ok(StressTrajectory {
        times: times.to_vec(),
        states,
        residual_rel: None,
        solver: SolverTag::ExtRakrylov,
        rows: rows.map(<[usize]>::to_vec),
    })
}
