//! Shift-and-invert Arnoldi: the rational Krylov basis shared by both
//! reduction engines.

use nalgebra::DMatrix;

use crate::discretization::dot;
use crate::error::{EmError, Result};
use crate::sparse::{CsrMatrix, SparseLu};

/// A new direction is dropped when its norm after orthogonalization falls
/// below this fraction of its norm before.
pub const BREAKDOWN_TOLERANCE: f64 = 1e-12;

/// Orthogonality loss that triggers another Gram-Schmidt pass.
pub const REORTHOGONALIZATION_THRESHOLD: f64 = 1e-12;

/// Gram-Schmidt passes allowed per new direction.
const MAX_PASSES: usize = 3;

/// Orthonormal basis V, Hessenberg H of (A − σI)⁻¹ and the Arnoldi remainder.
#[derive(Debug, Clone)]
pub struct KrylovBasis {
    /// Columns v_1..v_k.
    pub v: Vec<Vec<f64>>,
    /// k×k upper Hessenberg projection of (A − σI)⁻¹.
    pub h: DMatrix<f64>,
    /// ‖seed‖₂.
    pub beta: f64,
    /// h_{k+1,k}; zero on happy breakdown.
    pub h_next: f64,
    /// v_{k+1}; absent on happy breakdown.
    pub v_next: Option<Vec<f64>>,
    pub sigma: f64,
    pub order_requested: usize,
}

impl KrylovBasis {
    pub fn order(&self) -> usize {
        self.v.len()
    }

    pub fn happy_breakdown(&self) -> bool {
        self.v_next.is_none()
    }

    /// V·y for a coefficient vector y.
    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        combine(&self.v, y)
    }

    /// Vᵀ·x.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.v.iter().map(|c| dot(c, x)).collect()
    }
}

pub(crate) fn combine(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = columns.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (c, &yi) in columns.iter().zip(y) {
        for (o, &ci) in out.iter_mut().zip(c) {
            *o += yi * ci;
        }
    }
    out
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Modified Gram-Schmidt of `w` against orthonormal `basis`, repeated while
/// orthogonality is lost. Returns the accumulated projection coefficients
/// and ‖w‖ after orthogonalization.
pub(crate) fn orthogonalize(basis: &[Vec<f64>], w: &mut [f64]) -> (Vec<f64>, f64) {
    let mut coeffs = vec![0.0; basis.len()];
    let mut norm = norm2(w);
    for _ in 0..MAX_PASSES {
        for (c, v) in coeffs.iter_mut().zip(basis) {
            let h = dot(v, w);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= h * vi;
            }
            *c += h;
        }
        norm = norm2(w);
        if norm == 0.0 {
            break;
        }
        let loss = basis.iter().map(|v| dot(v, w).abs()).fold(0.0, f64::max) / norm;
        if loss <= REORTHOGONALIZATION_THRESHOLD {
            break;
        }
    }
    (coeffs, norm)
}

/// Arnoldi on (A − σI)⁻¹ with the given solve.
pub(crate) fn arnoldi<F>(solve: F, n: usize, seed: &[f64], q: usize, sigma: f64) -> Result<KrylovBasis>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if q < 1 {
        return Err(EmError::Parameter("Krylov order must be at least 1".into()));
    }
    let beta = norm2(seed);
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(EmError::DegenerateInput("Krylov seed vector is zero".into()));
    }
    let q = q.min(n);
    let mut v = vec![seed.iter().map(|x| x / beta).collect::<Vec<f64>>()];
    let mut h = DMatrix::zeros(q + 1, q);
    let mut v_next = None;
    let mut k = 0;
    for j in 0..q {
        let mut w = solve(&v[j]);
        let raw = norm2(&w);
        let (coeffs, norm) = orthogonalize(&v, &mut w);
        for (i, c) in coeffs.into_iter().enumerate() {
            h[(i, j)] = c;
        }
        k = j + 1;
        // A full-dimensional basis is invariant by construction.
        if norm <= BREAKDOWN_TOLERANCE * raw || k == n {
            v_next = None;
            break;
        }
        h[(j + 1, j)] = norm;
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        if k == q {
            v_next = Some(next);
        } else {
            v.push(next);
        }
    }
    let h_next = if v_next.is_some() { h[(k, k - 1)] } else { 0.0 };
    Ok(KrylovBasis {
        v,
        h: h.view((0, 0), (k, k)).into_owned(),
        beta,
        h_next,
        v_next,
        sigma,
        order_requested: q,
    })
}

/// Rational Krylov basis of (A − σI)⁻¹ seeded with `v`, one LU for all solves.
pub fn rational_krylov_basis(a: &CsrMatrix, v: &[f64], q: usize, sigma: f64) -> Result<KrylovBasis> {
    if !(sigma > 0.0) {
        return Err(EmError::Parameter(format!("shift must be positive, got {sigma}")));
    }
    let lu = SparseLu::new(a, 1.0, -sigma)?;
    arnoldi(|x| lu.solve(x), a.n(), v, q, sigma)
}

/// ‖VᵀV − I‖_F.
pub fn orthonormality_error(v: &[Vec<f64>]) -> f64 {
    let k = v.len();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            acc += (dot(&v[i], &v[j]) - target).powi(2);
        }
    }
    acc.sqrt()
}

/// ‖(A − σI)⁻¹V − V·H − h_{k+1,k}·v_{k+1}·e_kᵀ‖_F, with the inverse applied
/// by `solve`.
pub fn arnoldi_relation_residual<F>(basis: &KrylovBasis, solve: F) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let k = basis.order();
    let mut acc = 0.0;
    for j in 0..k {
        let mut r = solve(&basis.v[j]);
        let col: Vec<f64> = (0..k).map(|i| basis.h[(i, j)]).collect();
        let vh = basis.expand(&col);
        for (ri, x) in r.iter_mut().zip(&vh) {
            *ri -= x;
        }
        if j == k - 1 {
            if let Some(vn) = &basis.v_next {
                for (ri, x) in r.iter_mut().zip(vn) {
                    *ri -= basis.h_next * x;
                }
            }
        }
        acc += dot(&r, &r);
    }
    acc.sqrt()
}
