//! Exponential integration with a single-shift rational Krylov basis:
//! σ(t) ≈ β·V·e^{tĤ}·e₁ − f with f = A⁻¹b and Ĥ = H⁻¹ + σI.

use nalgebra::{DMatrix, DVector};

use crate::discretization::{dot, LtiSystem};
use crate::error::{EmError, Result};
use crate::expm::small_matrix_exp;
use crate::krylov::{arnoldi, KrylovBasis};
use crate::trajectory::{validate_times, SolverTag, StressTrajectory, TimeGrid};

/// Condition number above which H is treated as not invertible.
pub const HESSENBERG_CONDITION_LIMIT: f64 = 1e14;

/// Reduced exponential model of one phase.
#[derive(Debug, Clone)]
pub struct EiModel {
    /// Absent when x0 + f = 0 (the state sits at its steady value).
    pub basis: Option<KrylovBasis>,
    pub f: Vec<f64>,
    pub h_hat: DMatrix<f64>,
    x0: Vec<f64>,
    vt_f: DVector<f64>,
    f_norm2: f64,
}

impl EiModel {
    pub fn build(sys: &LtiSystem, q: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(EmError::Parameter(format!("shift must be positive, got {sigma}")));
        }
        if q < 1 {
            return Err(EmError::Parameter("Krylov order must be at least 1".into()));
        }
        let f = sys.solve_operator(&sys.drive())?;
        let v0: Vec<f64> = sys.x0.iter().zip(&f).map(|(x, f)| x + f).collect();
        let f_norm2 = dot(&f, &f);
        if v0.iter().all(|&v| v == 0.0) {
            return Ok(Self {
                basis: None,
                f,
                h_hat: DMatrix::zeros(0, 0),
                x0: sys.x0.clone(),
                vt_f: DVector::zeros(0),
                f_norm2,
            });
        }
        let solver = sys.factor(1.0, -sigma)?;
        let basis = arnoldi(|x| solver.solve(x), sys.n(), &v0, q, sigma)?;
        let h_hat = mapped_operator(&basis.h, sigma)?;
        let vt_f = DVector::from_vec(basis.project(&f));
        Ok(Self { basis: Some(basis), f, h_hat, x0: sys.x0.clone(), vt_f, f_norm2 })
    }

    pub fn order(&self) -> usize {
        self.basis.as_ref().map_or(0, KrylovBasis::order)
    }

    /// z(t) = e^{tĤ}·e₁.
    pub fn z(&self, t: f64) -> Result<DVector<f64>> {
        let k = self.order();
        if k == 0 {
            return Ok(DVector::zeros(0));
        }
        let e = small_matrix_exp(&self.h_hat, t)?;
        Ok(e.column(0).into_owned())
    }

    /// Full state at time t; t = 0 returns x0 exactly.
    pub fn state(&self, t: f64) -> Result<Vec<f64>> {
        if t == 0.0 {
            return Ok(self.x0.clone());
        }
        let z = self.z(t)?;
        Ok(self.state_from_z(&z))
    }

    pub fn state_from_z(&self, z: &DVector<f64>) -> Vec<f64> {
        let mut out: Vec<f64> = self.f.iter().map(|v| -v).collect();
        if let Some(b) = &self.basis {
            for (col, &zi) in b.v.iter().zip(z.iter()) {
                let c = b.beta * zi;
                for (o, &vi) in out.iter_mut().zip(col) {
                    *o += c * vi;
                }
            }
        }
        out
    }

    pub fn rows_from_z(&self, z: &DVector<f64>, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&r| {
                let mut acc = -self.f[r];
                if let Some(b) = &self.basis {
                    for (col, &zi) in b.v.iter().zip(z.iter()) {
                        acc += b.beta * zi * col[r];
                    }
                }
                acc
            })
            .collect()
    }

    /// ‖β·V·z − f‖₂ without forming the state.
    pub fn state_norm(&self, z: &DVector<f64>) -> f64 {
        let Some(b) = &self.basis else {
            return self.f_norm2.sqrt();
        };
        let val = b.beta * b.beta * z.norm_squared() - 2.0 * b.beta * z.dot(&self.vt_f) + self.f_norm2;
        val.max(0.0).sqrt()
    }

    /// (absolute, relative) residual estimate at coefficient vector z.
    pub fn residual(&self, z: &DVector<f64>) -> (f64, f64) {
        match &self.basis {
            Some(b) => residual_estimate(b, z, self.state_norm(z)),
            None => (0.0, 0.0),
        }
    }
}

/// Ĥ = H⁻¹ + σI, refusing ill-conditioned H.
pub fn mapped_operator(h: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    let k = h.nrows();
    let sv = h.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= HESSENBERG_CONDITION_LIMIT) {
        return Err(EmError::SingularHessenberg { condition });
    }
    let inv = h.clone().try_inverse().ok_or(EmError::SingularHessenberg { condition })?;
    Ok(inv + DMatrix::identity(k, k) * sigma)
}

/// Arnoldi remainder β·σ·|h_{k+1,k}·z_k|, zero on happy breakdown. H
/// approximates (A − σI)⁻¹ and carries units of time, so σ makes the
/// estimate a stress. The relative value divides by max(‖state‖, 1e-30).
pub fn residual_estimate(basis: &KrylovBasis, z: &DVector<f64>, state_norm: f64) -> (f64, f64) {
    if basis.v_next.is_none() || z.is_empty() {
        return (0.0, 0.0);
    }
    let abs = basis.beta * basis.sigma * (basis.h_next * z[z.len() - 1]).abs();
    (abs, abs / state_norm.max(1e-30))
}

#[derive(Debug, Clone)]
pub struct EiSolution {
    pub trajectory: StressTrajectory,
    pub f: Vec<f64>,
    pub h_hat: DMatrix<f64>,
    pub model: EiModel,
}

/// Full-state EI trajectory with relative residuals on every grid time.
pub fn ei_transient(sys: &LtiSystem, grid: &TimeGrid, q: usize, sigma: f64) -> Result<EiSolution> {
    let model = EiModel::build(sys, q, sigma)?;
    let trajectory = ei_trajectory(&model, grid.times(), None)?;
    Ok(EiSolution { trajectory, f: model.f.clone(), h_hat: model.h_hat.clone(), model })
}

/// Evaluates an EI model on `times`, optionally only at `rows`. Uniform
/// steps reuse one propagator e^{hĤ}.
pub fn ei_trajectory(model: &EiModel, times: &[f64], rows: Option<&[usize]>) -> Result<StressTrajectory> {
    validate_times(times)?;
    let k = model.order();
    let mut z = DVector::zeros(k);
    if k > 0 {
        z[0] = 1.0;
    }
    let mut propagator: Option<(f64, DMatrix<f64>)> = None;
    let mut states = Vec::with_capacity(times.len());
    let mut residual = Vec::with_capacity(times.len());
    states.push(match rows {
        Some(r) => r.iter().map(|&i| model.x0[i]).collect(),
        None => model.x0.clone(),
    });
    residual.push(0.0);
    for w in times.windows(2) {
        let h = w[1] - w[0];
        let reuse = matches!(&propagator, Some((h_old, _)) if (h - h_old).abs() <= 1e-12 * h_old);
        if !reuse {
            propagator = Some((h, small_matrix_exp(&model.h_hat, h)?));
        }
        if k > 0 {
            z = &propagator.as_ref().unwrap().1 * &z;
        }
        states.push(match rows {
            Some(r) => model.rows_from_z(&z, r),
            None => model.state_from_z(&z),
        });
        residual.push(model.residual(&z).1);
    }
    Ok(StressTrajectory {
        times: times.to_vec(),
        states,
        residual_rel: Some(residual),
        solver: SolverTag::EiRakrylov,
        rows: rows.map(<[usize]>::to_vec),
    })
}
