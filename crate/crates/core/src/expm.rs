//! Dense matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant.

use nalgebra::DMatrix;

use crate::error::{EmError, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the unscaled degree-13 approximant is accurate
/// to double precision.
const THETA13: f64 = 5.371920351148152;

/// e^{t·M} for a small dense square matrix.
pub fn small_matrix_exp(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(EmError::Parameter(format!("matrix exponential needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(EmError::Numerical("matrix exponential input is not finite".into()));
    }
    let n = m.nrows();
    let a = m * t;
    let norm = one_norm(&a);
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * 2f64.powi(-s);

    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| EmError::Numerical("Padé denominator is singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(EmError::Numerical("matrix exponential overflowed".into()));
    }
    Ok(r)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn zero_gives_identity() {
        let e = small_matrix_exp(&DMatrix::zeros(4, 4), 3.0).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn diagonal_matrix() {
        let d = DVector::from_vec(vec![-3.0, 0.5, -40.0, 2.0]);
        let e = small_matrix_exp(&DMatrix::from_diagonal(&d), 0.7).unwrap();
        for i in 0..4 {
            let exact = (0.7 * d[i]).exp();
            assert!((e[(i, i)] - exact).abs() <= 1e-13 * exact);
            for j in 0..4 {
                if i != j {
                    assert!(e[(i, j)].abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn nilpotent_matches_series() {
        // exp of a strictly upper triangular 3x3 truncates after the square.
        let n = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 3.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0]);
        let exact = DMatrix::identity(3, 3) + &n + &n * &n * 0.5;
        assert!(rel_err(&small_matrix_exp(&n, 1.0).unwrap(), &exact) < 1e-15);
    }

    #[test]
    fn rotation_generator() {
        let w = 2.3;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = small_matrix_exp(&m, 1.0).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[w.cos(), -w.sin(), w.sin(), w.cos()]);
        assert!(rel_err(&e, &exact) < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(small_matrix_exp(&m, 1.0), Err(EmError::Numerical(_))));
    }

    proptest! {
        // Diagonalizable M = P·D·P⁻¹ with a well-conditioned P: e^{tM} = P·e^{tD}·P⁻¹.
        #[test]
        fn matches_eigendecomposition(
            p in proptest::collection::vec(-1.0f64..1.0, 36),
            d in proptest::collection::vec(-20.0f64..2.0, 6),
            t in 0.0f64..1.0,
        ) {
            let p = DMatrix::from_row_slice(6, 6, &p) * 0.3 + DMatrix::identity(6, 6);
            let pinv = p.clone().try_inverse().unwrap();
            let m = &p * DMatrix::from_diagonal(&DVector::from_vec(d.clone())) * &pinv;
            let ed = DMatrix::from_diagonal(&DVector::from_iterator(6, d.iter().map(|x| (x * t).exp())));
            let exact = &p * ed * &pinv;
            let got = small_matrix_exp(&m, t).unwrap();
            prop_assert!(rel_err(&got, &exact) < 1e-10);
        }
    }
}
