//! Python module `emkrylov`: tree construction, two-phase simulation,
//! reference solutions and parameter tuning.

use emkrylov_core as core;
use emkrylov_core::{EngineConfig, InterconnectTree, Probes, SolverKind};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(emkrylov, EmError, PyException, "Raised for invalid input or a failed simulation.");

fn err(e: core::EmError) -> PyErr {
    EmError::new_err(e.to_string())
}

fn solver_kind(name: &str) -> PyResult<SolverKind> {
    match name {
        "fdm" => Ok(SolverKind::Fdm),
        "ext" | "ext-rakrylov" => Ok(SolverKind::Ext),
        "ei" | "ei-rakrylov" => Ok(SolverKind::Ei),
        other => Err(EmError::new_err(format!("unknown solver {other:?}; expected fdm, ext or ei"))),
    }
}

/// An interconnect tree.
#[pyclass(name = "Tree", frozen, module = "emkrylov")]
pub struct PyTree {
    inner: InterconnectTree,
}

#[pymethods]
impl PyTree {
    /// Synthetic tree with default parameter ranges.
    #[staticmethod]
    #[pyo3(signature = (segments, seed = 0, path = false))]
    fn generate(segments: usize, seed: u64, path: bool) -> PyResult<Self> {
        let mut cfg = core::GeneratorConfig::new(segments, seed);
        if path {
            cfg = cfg.path();
        }
        Ok(Self { inner: core::generate_synthetic_tree(&cfg).map_err(err)? })
    }

    /// Parse `emtree v1` text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: core::parse_tree(text).map_err(err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_segments(&self) -> usize {
        self.inner.n_segments()
    }

    /// Mean segment length and longest path, in metres.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = core::tree_stats(&self.inner);
        let d = PyDict::new(py);
        d.set_item("l_avg", s.l_avg)?;
        d.set_item("l_max", s.l_max)?;
        d.set_item("n_segments", s.n_segments)?;
        d.set_item("n_nodes", s.n_nodes)?;
        Ok(d)
    }

    /// τ_nuc and τ_post in seconds.
    fn shift_times<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = core::estimate_shift_times(&self.inner);
        let d = PyDict::new(py);
        d.set_item("tau_nuc", s.tau_nuc)?;
        d.set_item("tau_post", s.tau_post)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Tree(n_nodes={}, n_segments={})", self.inner.n_nodes(), self.inner.n_segments())
    }
}

/// Outcome of a two-phase simulation.
#[pyclass(name = "SimulationResult", frozen, module = "emkrylov")]
pub struct PySimulationResult {
    inner: core::SimulationResult,
}

#[pymethods]
impl PySimulationResult {
    #[getter]
    fn t_nuc(&self) -> Option<f64> {
        self.inner.t_nuc
    }

    #[getter]
    fn nucleation_node(&self) -> Option<usize> {
        self.inner.nucleation_node
    }

    #[getter]
    fn voided_segment(&self) -> Option<usize> {
        self.inner.voided_segment
    }

    #[getter]
    fn delta_r(&self) -> Vec<f64> {
        self.inner.delta_r.clone()
    }

    #[getter]
    fn delta_r_final(&self) -> f64 {
        self.inner.delta_r_final()
    }

    #[getter]
    fn void_volume(&self) -> Vec<f64> {
        self.inner.void_volume.clone()
    }

    #[getter]
    fn sigma_crit(&self) -> f64 {
        self.inner.sigma_crit
    }

    #[getter]
    fn order_nuc(&self) -> Option<usize> {
        self.inner.order_nuc
    }

    #[getter]
    fn order_post(&self) -> Option<usize> {
        self.inner.order_post
    }

    /// Grid indices stored in each state row (None: all unknowns).
    #[getter]
    fn rows(&self) -> Option<Vec<usize>> {
        self.inner.trajectory_nuc.rows.clone()
    }

    #[getter]
    fn times_nuc(&self) -> Vec<f64> {
        self.inner.trajectory_nuc.times.clone()
    }

    #[getter]
    fn stress_nuc(&self) -> Vec<Vec<f64>> {
        self.inner.trajectory_nuc.states.clone()
    }

    #[getter]
    fn times_post(&self) -> Option<Vec<f64>> {
        self.inner.trajectory_post.as_ref().map(|t| t.times.clone())
    }

    #[getter]
    fn stress_post(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.trajectory_post.as_ref().map(|t| t.states.clone())
    }

    /// EI relative residual estimates per nucleation-phase sample.
    #[getter]
    fn residual_nuc(&self) -> Option<Vec<f64>> {
        self.inner.trajectory_nuc.residual_rel.clone()
    }

    /// Wall-clock seconds per stage.
    #[getter]
    fn timings<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = &self.inner.timings;
        let d = PyDict::new(py);
        d.set_item("assembly_s", t.assembly_s)?;
        d.set_item("nucleation_s", t.nucleation_s)?;
        d.set_item("postvoid_s", t.postvoid_s)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "SimulationResult(solver={:?}, t_nuc={:?}, nucleation_node={:?}, delta_r_final={})",
            self.inner.config.solver.tag().as_str(),
            self.inner.t_nuc,
            self.inner.nucleation_node,
            self.inner.delta_r_final()
        )
    }
}

fn engine_config(
    solver: &str,
    q: usize,
    eta_nuc: f64,
    eta_post: f64,
    steps: usize,
    points: usize,
    sigma_crit: Option<f64>,
) -> PyResult<EngineConfig> {
    let mut cfg = EngineConfig::new(solver_kind(solver)?).with_params(q, eta_nuc, eta_post).with_steps(steps);
    cfg.points_per_segment = points;
    cfg.sigma_crit = sigma_crit;
    Ok(cfg)
}

/// Nucleation and post-void simulation of `tree`.
#[pyfunction]
#[pyo3(signature = (tree, solver = "ext", q = 6, eta_nuc = 1.0, eta_post = 1.0, steps = 100, points = 11,
                    sigma_crit = None, fastem = false, full_grid = false))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    tree: &PyTree,
    solver: &str,
    q: usize,
    eta_nuc: f64,
    eta_post: f64,
    steps: usize,
    points: usize,
    sigma_crit: Option<f64>,
    fastem: bool,
    full_grid: bool,
) -> PyResult<PySimulationResult> {
    let mut cfg = engine_config(solver, q, eta_nuc, eta_post, steps, points, sigma_crit)?;
    cfg.fastem = fastem;
    cfg.probes = if full_grid { Probes::FullGrid } else { Probes::TreeNodes };
    let inner = py.detach(|| core::simulate_two_phase(&tree.inner, &cfg)).map_err(err)?;
    Ok(PySimulationResult { inner })
}

/// Converged FDM reference: {"t_nuc", "delta_r", "substeps"}.
#[pyfunction]
#[pyo3(signature = (tree, steps = 100, points = 11, sigma_crit = None))]
fn reference<'py>(
    py: Python<'py>,
    tree: &PyTree,
    steps: usize,
    points: usize,
    sigma_crit: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let base = engine_config("ext", 6, 1.0, 1.0, steps, points, sigma_crit)?;
    let r = py
        .detach(|| {
            let sim = core::Simulator::new(&tree.inner, points)?;
            core::reference_solution(&sim, &base, &core::ReferenceConfig::default())
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("t_nuc", r.t_nuc)?;
    d.set_item("delta_r", r.delta_r)?;
    d.set_item("substeps", r.substeps)?;
    Ok(d)
}

/// Coordinate-descent search over (q, η_nuc, η_post) against the FDM reference.
#[pyfunction]
#[pyo3(signature = (tree, solver = "ext", steps = 100, points = 11, sigma_crit = None, orders = vec![3, 4, 5, 6],
                    initial = (4, 1.0, 1.0), max_iterations = 20))]
#[allow(clippy::too_many_arguments)]
fn tune<'py>(
    py: Python<'py>,
    tree: &PyTree,
    solver: &str,
    steps: usize,
    points: usize,
    sigma_crit: Option<f64>,
    orders: Vec<usize>,
    initial: (usize, f64, f64),
    max_iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let base = engine_config(solver, initial.0, initial.1, initial.2, steps, points, sigma_crit)?;
    if base.solver == SolverKind::Fdm {
        return Err(EmError::new_err("tuning needs a Krylov solver (ext or ei)"));
    }
    let cfg = core::TunerConfig { order_set: orders, initial, max_iterations, ..core::TunerConfig::default() };
    let r = py
        .detach(|| {
            let sim = core::Simulator::new(&tree.inner, points)?;
            let reference = core::reference_solution(&sim, &base, &core::ReferenceConfig::default())?;
            core::coordinate_descent_with(&cfg, &sim, &base, reference)
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("q", r.q)?;
    d.set_item("eta_nuc", r.eta_nuc)?;
    d.set_item("eta_post", r.eta_post)?;
    d.set_item("j", r.j)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("evaluations", r.evaluations)?;
    d.set_item("trace", r.trace)?;
    d.set_item("reference_t_nuc", r.reference.t_nuc)?;
    d.set_item("reference_delta_r", r.reference.delta_r)?;
    Ok(d)
}

/// 100·|x − y|/(|x| + ε).
#[pyfunction]
#[pyo3(signature = (reference, candidate, epsilon = 1e-30))]
fn percentage_error(reference: f64, candidate: f64, epsilon: f64) -> f64 {
    core::percentage_error(reference, candidate, epsilon)
}

#[pymodule]
fn emkrylov(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTree>()?;
    m.add_class::<PySimulationResult>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reference, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(percentage_error, m)?)?;
    m.add("EmError", m.py().get_type::<EmError>())?;
    Ok(())
}
