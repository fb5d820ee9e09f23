//! Oracles and property checks shared by the integration and acceptance targets.
#![allow(dead_code)]

use emkrylov_core::krylov::{arnoldi_relation_residual, orthonormality_error};
use emkrylov_core::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type PropResult = std::result::Result<(), TestCaseError>;

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_l2(candidate: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = candidate.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    num / norm2(reference).max(1e-300)
}

/// Exact x(t) for ẋ = Ax + b from the eigendecomposition of the
/// control-volume-symmetrized operator W^{1/2} A W^{-1/2}.
pub fn modal_exact(sys: &LtiSystem, t: f64) -> Vec<f64> {
    let n = sys.n();
    let a = sys.a.to_dense();
    let w = &sys.control_volume;
    let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * (w[i] / w[j]).sqrt());
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let b = sys.drive();
    let bt = DVector::from_iterator(n, (0..n).map(|i| b[i] * w[i].sqrt()));
    let xt0 = DVector::from_iterator(n, (0..n).map(|i| sys.x0[i] * w[i].sqrt()));
    let c0 = eig.eigenvectors.transpose() * xt0;
    let cb = eig.eigenvectors.transpose() * bt;
    let lam_max = eig.eigenvalues.amax();
    let c = DVector::from_iterator(
        n,
        (0..n).map(|m| {
            let l = eig.eigenvalues[m];
            let growth = if l.abs() <= 1e-10 * lam_max { t } else { (l * t).exp_m1() / l };
            (l * t).exp() * c0[m] + growth * cb[m]
        }),
    );
    let xt = &eig.eigenvectors * c;
    (0..n).map(|i| xt[i] / w[i].sqrt()).collect()
}

/// Small random tree: 1–6 segments, either topology.
pub fn small_tree() -> impl Strategy<Value = InterconnectTree> {
    (1usize..=6, any::<u64>(), any::<bool>()).prop_map(|(n, seed, path)| {
        let mut cfg = GeneratorConfig::new(n, seed);
        if path {
            cfg = cfg.path();
        }
        generate_synthetic_tree(&cfg).expect("valid generator config")
    })
}

pub fn arnoldi_case() -> impl Strategy<Value = (InterconnectTree, usize, usize, f64, u64)> {
    (small_tree(), 4usize..=12, 2usize..=12, -1.0f64..1.0, any::<u64>())
}

/// Arnoldi relation and orthonormality of a rational Krylov basis seeded with
/// a random vector.
pub fn check_arnoldi(
    (tree, points, q, log_factor, seed): (InterconnectTree, usize, usize, f64, u64),
) -> PropResult {
    use rand::{Rng, SeedableRng};
    let sys = assemble_nucleation(&tree, points).unwrap();
    let sigma = 10f64.powf(log_factor) / estimate_shift_times(&tree).tau_nuc;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..sys.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let basis = match rational_krylov_basis(&sys.a, &v, q.min(sys.n()), sigma) {
        Ok(b) => b,
        Err(EmError::DegenerateInput(_)) => return Ok(()),
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };
    let si = sys.shift_invert(sigma).unwrap();
    // Scale-free form of the relation: the residual against ‖(A − σI)⁻¹‖ ≈ ‖H‖.
    let res = arnoldi_relation_residual(&basis, |x| si.solve(x)) / basis.h.norm().max(1e-300);
    prop_assert!(res <= 1e-8, "Arnoldi residual {res}");
    let orth = orthonormality_error(&basis.v);
    prop_assert!(orth <= 1e-10, "orthonormality {orth}");
    Ok(())
}

pub fn conservation_case() -> impl Strategy<Value = (InterconnectTree, usize, u64, usize)> {
    (small_tree(), 3usize..=15, any::<u64>(), 1usize..=40)
}

/// Backward Euler keeps the control-volume-weighted stress sum fixed.
pub fn check_conservation(
    (tree, points, seed, steps): (InterconnectTree, usize, u64, usize),
) -> PropResult {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sys = assemble_nucleation(&tree, points).unwrap();
    let x0: Vec<f64> = (0..sys.n()).map(|_| rng.random_range(-1e8..1e8)).collect();
    let sys = sys.with_x0(x0);
    let tau = estimate_shift_times(&tree).tau_nuc;
    let traj = backward_euler(&sys, &TimeGrid::uniform(5.0 * tau, steps).unwrap()).unwrap();
    let w = &sys.control_volume;
    let total = |x: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let scale = |x: &[f64]| x.iter().zip(w).map(|(a, b)| (a * b).abs()).sum::<f64>();
    let m0 = total(&sys.x0);
    for s in &traj.states {
        let drift = (total(s) - m0).abs() / scale(s).max(scale(&sys.x0));
        prop_assert!(drift <= 1e-8, "mass drift {drift}");
    }
    Ok(())
}

pub fn delta_r_case() -> impl Strategy<Value = (InterconnectTree, f64, usize)> {
    (small_tree(), 0.05f64..0.9, prop::sample::select(vec![0usize, 1, 2]))
}

/// ΔR(t) is nonnegative and nondecreasing after a void forms. The critical
/// stress is set to a fraction of the steady peak so every instance nucleates.
pub fn check_delta_r((tree, fraction, solver): (InterconnectTree, f64, usize)) -> PropResult {
    let sys = assemble_nucleation(&tree, 7).unwrap();
    let steady = sys.solve_operator(&sys.drive().iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
    let peak = steady[..sys.n_tree_nodes].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    prop_assume!(peak > 0.0);
    let kind = [SolverKind::Fdm, SolverKind::Ext, SolverKind::Ei][solver];
    let mut cfg = EngineConfig::new(kind).with_params(6, 1.0, 1.0).with_steps(60);
    cfg.points_per_segment = 7;
    cfg.sigma_crit = Some(fraction * peak);
    let r = simulate_two_phase(&tree, &cfg).unwrap();
    let dr = &r.delta_r;
    let top = dr.iter().cloned().fold(0.0, f64::max);
    for (k, &v) in dr.iter().enumerate() {
        prop_assert!(v >= 0.0, "negative ΔR {v} at sample {k}");
    }
    for w in dr.windows(2) {
        prop_assert!(w[1] >= w[0] - 1e-12 * top, "ΔR decreased from {} to {}", w[0], w[1]);
    }
    Ok(())
}

pub fn tuner_case() -> impl Strategy<Value = (InterconnectTree, usize, f64)> {
    (small_tree(), prop::sample::select(vec![0usize, 1]), 0.1f64..0.8)
}

/// The accepted objective never increases across iterations.
pub fn check_tuner_trace((tree, solver, fraction): (InterconnectTree, usize, f64)) -> PropResult {
    let sys = assemble_nucleation(&tree, 5).unwrap();
    let steady = sys.solve_operator(&sys.drive().iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
    let peak = steady[..sys.n_tree_nodes].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    prop_assume!(peak > 0.0);
    let kind = [SolverKind::Ext, SolverKind::Ei][solver];
    let mut base = EngineConfig::new(kind).with_steps(20);
    base.points_per_segment = 5;
    base.sigma_crit = Some(fraction * peak);
    let sim = Simulator::new(&tree, 5).unwrap();
    let rc = ReferenceConfig { rel_tol: 1e-3, initial_substeps: 8, max_substeps: 1 << 12, ..ReferenceConfig::default() };
    let reference = match reference_solution(&sim, &base, &rc) {
        Ok(r) => r,
        Err(_) => return Err(TestCaseError::reject("reference did not settle")),
    };
    let cfg = TunerConfig { max_iterations: 4, order_set: vec![2, 3, 4], ..TunerConfig::default() };
    let res = match coordinate_descent_with(&cfg, &sim, &base, reference) {
        Ok(r) => r,
        Err(EmError::SearchFailure(_)) => return Err(TestCaseError::reject("no candidate nucleated")),
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };
    for w in res.trace.windows(2) {
        prop_assert!(w[1] <= w[0], "J rose from {} to {}", w[0], w[1]);
    }
    prop_assert_eq!(*res.trace.last().unwrap(), res.j);
    Ok(())
}

pub fn detection_case() -> impl Strategy<Value = (InterconnectTree, f64, f64)> {
    (small_tree(), 0.0f64..1.2, 0.0f64..1.2)
}

/// A larger critical stress is never reached earlier.
pub fn check_detection_monotone((tree, f1, f2): (InterconnectTree, f64, f64)) -> PropResult {
    let sys = assemble_nucleation(&tree, 6).unwrap();
    let tau = estimate_shift_times(&tree).tau_nuc;
    let traj = backward_euler(&sys, &TimeGrid::uniform(3.0 * tau, 30).unwrap()).unwrap();
    let peak = traj.states.iter().flat_map(|s| s.iter().cloned()).fold(0.0, f64::max);
    prop_assume!(peak > 0.0);
    let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
    let a = detect_nucleation(&traj, lo * peak + 1.0);
    let b = detect_nucleation(&traj, hi * peak + 1.0);
    match (a, b) {
        (Some(a), Some(b)) => prop_assert!(a.t_nuc <= b.t_nuc, "{} > {}", a.t_nuc, b.t_nuc),
        (None, Some(b)) => prop_assert!(false, "lower threshold missed, higher hit at {}", b.t_nuc),
        _ => {}
    }
    Ok(())
}
