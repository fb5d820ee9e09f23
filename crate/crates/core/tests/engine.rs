use emkrylov_core::*;

const UM: f64 = 1e-6;

fn wire() -> InterconnectTree {
    // A small critical void volume so ΔR leaves zero within the horizon.
    let mat = MaterialParams { critical_void_volume: Some(1e-24), ..MaterialParams::default() };
    InterconnectTree::grow(&[SegmentSpec::new(0, 10.0 * UM, 0.5 * UM, 0.2 * UM, 1e10)], mat).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn fdm_and_full_order_ext_agree_on_twenty_points() {
    let tree = wire();
    let mut fdm = EngineConfig::new(SolverKind::Fdm);
    fdm.points_per_segment = 20;
    fdm.sigma_crit = Some(1e7);
    let mut ext = fdm.clone();
    ext.solver = SolverKind::Ext;
    ext.q = 20;
    ext.ext_integrator = ReducedIntegrator::BackwardEuler;
    let a = simulate_two_phase(&tree, &fdm).unwrap();
    let b = simulate_two_phase(&tree, &ext).unwrap();
    assert_eq!(b.order_nuc, Some(20));
    assert_eq!(a.nucleation_node, b.nucleation_node);
    assert!(rel(b.t_nuc.unwrap(), a.t_nuc.unwrap()) <= 1e-6);
    assert!(a.delta_r_final() > 0.0);
    assert!(rel(b.delta_r_final(), a.delta_r_final()) <= 1e-6);
}

#[test]
fn nucleation_stress_reaches_the_threshold() {
    let tree = generate_synthetic_tree(&GeneratorConfig::new(30, 3)).unwrap();
    for solver in [SolverKind::Fdm, SolverKind::Ext, SolverKind::Ei] {
        let mut cfg = EngineConfig::new(solver);
        cfg.sigma_crit = Some(5e7);
        let r = simulate_two_phase(&tree, &cfg).unwrap();
        let Some(node) = r.nucleation_node else { continue };
        let nuc = &r.trajectory_nuc;
        assert_eq!(*nuc.times.last().unwrap(), r.t_nuc.unwrap());
        let at_tnuc = nuc.last_state()[nuc.column_of(node).unwrap()];
        assert!(at_tnuc >= 5e7 * (1.0 - 1e-9), "{solver:?}: {at_tnuc}");
    }
}

#[test]
fn solvers_agree_on_the_nucleation_node() {
    let tree = generate_synthetic_tree(&GeneratorConfig::new(100, 2)).unwrap();
    let nodes: Vec<_> = [
        EngineConfig::new(SolverKind::Fdm).with_steps(400),
        EngineConfig::new(SolverKind::Ext).with_params(6, 0.1, 11.0),
        EngineConfig::new(SolverKind::Ei).with_params(5, 0.1, 8.0),
    ]
    .iter()
    .map(|cfg| simulate_two_phase(&tree, cfg).unwrap().nucleation_node)
    .collect();
    assert!(nodes[0].is_some());
    assert!(nodes.iter().all(|n| *n == nodes[0]), "{nodes:?}");
}

#[test]
fn void_stress_relaxes_after_nucleation() {
    let tree = generate_synthetic_tree(&GeneratorConfig::new(5, 1).path()).unwrap();
    let mut cfg = EngineConfig::new(SolverKind::Ei).with_params(6, 1.0, 1.0);
    cfg.sigma_crit = Some(3e8);
    let r = simulate_two_phase(&tree, &cfg).unwrap();
    let post = r.trajectory_post.unwrap();
    let series = post.series(post.column_of(r.nucleation_node.unwrap()).unwrap());
    assert!(series.last().unwrap().abs() < series[0].abs());
    assert!(r.delta_r.iter().all(|&d| d >= 0.0));
}

#[test]
fn zero_current_never_nucleates() {
    let tree = InterconnectTree::grow(&[SegmentSpec::new(0, 10.0 * UM, 0.5 * UM, 0.2 * UM, 0.0)], MaterialParams::default())
        .unwrap();
    let r = simulate_two_phase(&tree, &EngineConfig::new(SolverKind::Fdm)).unwrap();
    assert!(r.t_nuc.is_none());
    assert_eq!(r.delta_r_final(), 0.0);
}

#[test]
fn trajectories_follow_the_probe_choice() {
    let tree = generate_synthetic_tree(&GeneratorConfig::new(4, 9)).unwrap();
    let mut cfg = EngineConfig::new(SolverKind::Ext).with_steps(10);
    cfg.sigma_crit = Some(f64::INFINITY);
    let nodes = simulate_two_phase(&tree, &cfg).unwrap();
    assert_eq!(nodes.trajectory_nuc.states[0].len(), tree.n_nodes());
    cfg.probes = Probes::FullGrid;
    let full = simulate_two_phase(&tree, &cfg).unwrap();
    let n = Simulator::new(&tree, cfg.points_per_segment).unwrap().system().n();
    assert_eq!(full.trajectory_nuc.states[0].len(), n);
    for (a, b) in nodes.trajectory_nuc.states.iter().zip(&full.trajectory_nuc.states) {
        assert_eq!(&a[..], &b[..tree.n_nodes()]);
    }
}

#[test]
fn tuner_from_the_optimum_stays_put() {
    let tree = generate_synthetic_tree(&GeneratorConfig::new(20, 2)).unwrap();
    let sim = Simulator::new(&tree, 11).unwrap();
    let base = EngineConfig::new(SolverKind::Ext);
    let reference = reference_solution(&sim, &base, &ReferenceConfig::default());
    let Ok(reference) = reference else { return };
    let first = coordinate_descent_with(&TunerConfig::default(), &sim, &base, reference).unwrap();
    let cfg = TunerConfig { initial: (first.q, first.eta_nuc, first.eta_post), ..TunerConfig::default() };
    let again = coordinate_descent_with(&cfg, &sim, &base, reference).unwrap();
    assert_eq!(again.iterations, 1);
    assert_eq!((again.q, again.eta_nuc, again.eta_post), (first.q, first.eta_nuc, first.eta_post));
    assert_eq!(again.j, first.j);
}

#[test]
fn tuner_is_deterministic() {
    let tree = generate_synthetic_tree(&GeneratorConfig::new(20, 2)).unwrap();
    let sim = Simulator::new(&tree, 11).unwrap();
    let base = EngineConfig::new(SolverKind::Ei);
    let Ok(reference) = reference_solution(&sim, &base, &ReferenceConfig::default()) else { return };
    let a = coordinate_descent_with(&TunerConfig::default(), &sim, &base, reference).unwrap();
    let b = coordinate_descent_with(&TunerConfig::default(), &sim, &base, reference).unwrap();
    assert_eq!(a, b);
    assert!(a.evaluated.iter().all(|e| (0.1..=20.0).contains(&e.eta_nuc) && (0.1..=20.0).contains(&e.eta_post)));
}
