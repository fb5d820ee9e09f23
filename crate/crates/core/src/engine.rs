//! Two-phase electromigration analysis: nucleation detection, void growth
//! and resistance change.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{
    assemble_nucleation, assemble_postvoid, diffusivity, dot, LtiSystem, DEFAULT_POINTS_PER_SEGMENT,
};
use crate::ei::EiModel;
use crate::error::{EmError, Result};
use crate::expm::small_matrix_exp;
use crate::ext::{extended_rational_arnoldi, ReducedIntegrator, ReducedModel, ReducedPropagator};
use crate::fdm::BackwardEulerStepper;
use crate::trajectory::{SolverTag, StressTrajectory, TimeGrid};
use crate::tree::{tree_stats, InterconnectTree, MaterialParams, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Fdm,
    Ext,
    Ei,
}

impl SolverKind {
    pub fn tag(self) -> SolverTag {
        match self {
            SolverKind::Fdm => SolverTag::Fdm,
            SolverKind::Ext => SolverTag::ExtRakrylov,
            SolverKind::Ei => SolverTag::EiRakrylov,
        }
    }
}

/// Shift-time bases and the factors applied to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftTimes {
    /// L_avg²/(π²κ̄) (s).
    pub tau_nuc: f64,
    /// L_max²/(π²κ̄) (s).
    pub tau_post: f64,
    pub eta_nuc: f64,
    pub eta_post: f64,
}

impl ShiftTimes {
    pub fn with_factors(self, eta_nuc: f64, eta_post: f64) -> Self {
        Self { eta_nuc, eta_post, ..self }
    }

    pub fn t_shift_nuc(&self) -> f64 {
        self.eta_nuc * self.tau_nuc
    }

    pub fn t_shift_post(&self) -> f64 {
        self.eta_post * self.tau_post
    }
}

/// τ = L²/(π²κ̄) with κ̄ the mean segment diffusivity; factors start at 1.
pub fn estimate_shift_times(tree: &InterconnectTree) -> ShiftTimes {
    let stats = tree_stats(tree);
    let kappa = tree.segments().iter().map(|s| diffusivity(s, tree.materials())).sum::<f64>()
        / tree.n_segments() as f64;
    let tau = |l: f64| l * l / (PI * PI * kappa);
    ShiftTimes { tau_nuc: tau(stats.l_avg), tau_post: tau(stats.l_max), eta_nuc: 1.0, eta_post: 1.0 }
}

/// First crossing of the critical stress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nucleation {
    pub t_nuc: f64,
    /// Grid index of the crossing unknown.
    pub node: usize,
}

/// Scans a trajectory for the first time its maximum reaches `sigma_crit`,
/// interpolating linearly on the crossing unknown between samples.
pub fn detect_nucleation(traj: &StressTrajectory, sigma_crit: f64) -> Option<Nucleation> {
    let mut prev: Option<&[f64]> = None;
    for (k, state) in traj.states.iter().enumerate() {
        if let Some(col) = argmax(state) {
            if state[col] >= sigma_crit {
                let node = traj.rows.as_ref().map_or(col, |r| r[col]);
                let t_nuc = match (k, prev) {
                    (0, _) | (_, None) => traj.times[k],
                    (_, Some(p)) => interpolate_crossing(traj.times[k - 1], traj.times[k], p[col], state[col], sigma_crit),
                };
                return Some(Nucleation { t_nuc, node });
            }
        }
        prev = Some(state);
    }
    None
}

fn interpolate_crossing(t0: f64, t1: f64, s0: f64, s1: f64, crit: f64) -> f64 {
    if s1 == crit || s1 <= s0 {
        return t1;
    }
    let frac = ((crit - s0) / (s1 - s0)).clamp(0.0, 1.0);
    t0 + frac * (t1 - t0)
}

/// Largest entry, ties resolved to the lowest index.
fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

/// V_v = −Σ σ_i·V_i / B over the whole post-void domain (m³).
pub fn void_volume(state: &[f64], sys: &LtiSystem, tree: &InterconnectTree) -> f64 {
    -dot(state, &sys.control_volume) / tree.materials().bulk_modulus
}

/// Void volume attributed to each segment (node volumes split by segment).
pub fn void_volume_by_segment(state: &[f64], sys: &LtiSystem, tree: &InterconnectTree) -> Vec<f64> {
    let bulk = tree.materials().bulk_modulus;
    tree.segments()
        .iter()
        .map(|s| {
            let area = s.cross_section();
            let h = sys.dx[s.id];
            let pts = sys.points_per_segment;
            let mut acc = 0.0;
            for p in 0..pts {
                let w = if p == 0 || p == pts - 1 { area * h / 2.0 } else { area * h };
                acc += state[sys.segment_point(s, p)] * w;
            }
            -acc / bulk
        })
        .collect()
}

/// Critical void volume for a segment: the configured value or W²·H.
pub fn critical_void_volume(segment: &Segment, mat: &MaterialParams) -> f64 {
    mat.critical_void_volume.unwrap_or(segment.width * segment.width * segment.height)
}

/// Resistance per unit void length: barrier shunt minus the copper removed.
pub fn resistance_bracket(segment: &Segment, mat: &MaterialParams) -> f64 {
    let (w, h) = (segment.width, segment.height);
    mat.resistivity_ta / (mat.barrier_thickness * (2.0 * h + w)) - mat.resistivity_cu / (h * w)
}

/// ΔR (Ω) of the voided segment; zero until the void exceeds V_crit.
pub fn resistance_change(v_void: f64, segment: &Segment, mat: &MaterialParams) -> f64 {
    let v_crit = critical_void_volume(segment, mat);
    if v_void <= v_crit {
        return 0.0;
    }
    (v_void - v_crit) / (segment.width * segment.height) * resistance_bracket(segment, mat)
}

/// Unknowns recorded in trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Probes {
    TreeNodes,
    FullGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub solver: SolverKind,
    pub q: usize,
    pub eta_nuc: f64,
    pub eta_post: f64,
    pub steps_nuc: usize,
    pub steps_post: usize,
    /// Nucleation horizon in units of τ_nuc.
    pub horizon_nuc: f64,
    /// Post-void horizon in units of τ_post.
    pub horizon_post: f64,
    pub points_per_segment: usize,
    /// Inner backward-Euler steps per output interval (FDM only).
    pub fdm_substeps_nuc: usize,
    pub fdm_substeps_post: usize,
    pub ext_integrator: ReducedIntegrator,
    /// Extended Krylov without shift (σ = 0), for comparison runs.
    pub fastem: bool,
    pub probes: Probes,
    /// Overrides the tree's critical stress.
    pub sigma_crit: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Fdm,
            q: 6,
            eta_nuc: 1.0,
            eta_post: 1.0,
            steps_nuc: 100,
            steps_post: 100,
            horizon_nuc: 20.0,
            horizon_post: 20.0,
            points_per_segment: DEFAULT_POINTS_PER_SEGMENT,
            fdm_substeps_nuc: 1,
            fdm_substeps_post: 1,
            ext_integrator: ReducedIntegrator::Exponential,
            fastem: false,
            probes: Probes::TreeNodes,
            sigma_crit: None,
        }
    }
}

impl EngineConfig {
    pub fn new(solver: SolverKind) -> Self {
        Self { solver, ..Self::default() }
    }

    pub fn with_params(mut self, q: usize, eta_nuc: f64, eta_post: f64) -> Self {
        self.q = q;
        self.eta_nuc = eta_nuc;
        self.eta_post = eta_post;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps_nuc = steps;
        self.steps_post = steps;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps_nuc < 1 || self.steps_post < 1 {
            return Err(EmError::Parameter("each phase needs at least one time step".into()));
        }
        if self.fdm_substeps_nuc < 1 || self.fdm_substeps_post < 1 {
            return Err(EmError::Parameter("FDM substeps must be at least 1".into()));
        }
        for (name, v) in [
            ("eta_nuc", self.eta_nuc),
            ("eta_post", self.eta_post),
            ("horizon_nuc", self.horizon_nuc),
            ("horizon_post", self.horizon_post),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EmError::Parameter(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.solver != SolverKind::Fdm && self.q < 2 {
            return Err(EmError::Parameter(format!("reduction order must be at least 2, got {}", self.q)));
        }
        Ok(())
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub assembly_s: f64,
    pub nucleation_s: f64,
    pub postvoid_s: f64,
}

impl PhaseTimings {
    /// Solver time of both phases, assembly excluded.
    pub fn solver_s(&self) -> f64 {
        self.nucleation_s + self.postvoid_s
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub t_nuc: Option<f64>,
    /// Grid index of the nucleation unknown (a tree node id).
    pub nucleation_node: Option<usize>,
    pub voided_segment: Option<usize>,
    pub trajectory_nuc: StressTrajectory,
    /// Post-void samples on absolute times (t_nuc + local time).
    pub trajectory_post: Option<StressTrajectory>,
    pub void_volume: Vec<f64>,
    pub delta_r: Vec<f64>,
    pub config: EngineConfig,
    pub shift: ShiftTimes,
    pub sigma_crit: f64,
    pub order_nuc: Option<usize>,
    pub order_post: Option<usize>,
    pub timings: PhaseTimings,
    pub warnings: Vec<String>,
}

impl SimulationResult {
    /// ΔR at the end of the post-void horizon (0 without nucleation).
    pub fn delta_r_final(&self) -> f64 {
        self.delta_r.last().copied().unwrap_or(0.0)
    }

    pub fn void_volume_final(&self) -> f64 {
        self.void_volume.last().copied().unwrap_or(0.0)
    }
}

/// Reusable per-tree setup: assembled nucleation system and shift bases.
pub struct Simulator<'t> {
    tree: &'t InterconnectTree,
    sys: LtiSystem,
    shift: ShiftTimes,
    assembly_s: f64,
}

impl<'t> Simulator<'t> {
    pub fn new(tree: &'t InterconnectTree, points_per_segment: usize) -> Result<Self> {
        let start = Instant::now();
        let sys = assemble_nucleation(tree, points_per_segment)?;
        let _ = sys.symbolic();
        let assembly_s = start.elapsed().as_secs_f64();
        Ok(Self { tree, sys, shift: estimate_shift_times(tree), assembly_s })
    }

    pub fn system(&self) -> &LtiSystem {
        &self.sys
    }

    pub fn shift_times(&self) -> ShiftTimes {
        self.shift
    }

    pub fn tree(&self) -> &InterconnectTree {
        self.tree
    }

    pub fn run(&self, cfg: &EngineConfig) -> Result<SimulationResult> {
        cfg.validate()?;
        if cfg.points_per_segment != self.sys.points_per_segment {
            return Err(EmError::Parameter(format!(
                "simulator was assembled with {} points per segment, config asks for {}",
                self.sys.points_per_segment, cfg.points_per_segment
            )));
        }
        let tree = self.tree;
        let mat = tree.materials();
        let sigma_crit = cfg.sigma_crit.unwrap_or(mat.critical_stress);
        let shift = self.shift.with_factors(cfg.eta_nuc, cfg.eta_post);
        let rows: Option<Vec<usize>> = match cfg.probes {
            Probes::TreeNodes => Some((0..self.sys.n_tree_nodes).collect()),
            Probes::FullGrid => None,
        };
        // Nucleation is detected on tree nodes: without sources inside a
        // segment, the stress maximum sits on a node.
        let detect_rows: Vec<usize> = (0..self.sys.n_tree_nodes).collect();
        let mut warnings = tree.warnings();
        let mut timings = PhaseTimings { assembly_s: self.assembly_s, ..Default::default() };

        // Nucleation phase.
        let start = Instant::now();
        let grid = TimeGrid::uniform(cfg.horizon_nuc * shift.tau_nuc, cfg.steps_nuc)?;
        let sigma_nuc = if cfg.fastem { 0.0 } else { 1.0 / shift.t_shift_nuc() };
        let mut runner = PhaseRunner::new(&self.sys, cfg, sigma_nuc, cfg.fdm_substeps_nuc)?;
        let order_nuc = runner.order();
        let nuc = run_nucleation(&mut runner, &grid, rows.as_deref(), &detect_rows, sigma_crit)?;
        timings.nucleation_s = start.elapsed().as_secs_f64();

        let mut result = SimulationResult {
            t_nuc: None,
            nucleation_node: None,
            voided_segment: None,
            trajectory_nuc: nuc.trajectory,
            trajectory_post: None,
            void_volume: Vec::new(),
            delta_r: Vec::new(),
            config: cfg.clone(),
            shift,
            sigma_crit,
            order_nuc,
            order_post: None,
            timings,
            warnings: Vec::new(),
        };
        let Some((t_nuc, node, x_nuc)) = nuc.crossing else {
            result.warnings = warnings;
            return Ok(result);
        };
        let seg_id = tree.incidence()[node].first().copied().ok_or_else(|| {
            EmError::Numerical(format!("nucleation node {node} has no incident segment"))
        })?;
        let segment = &tree.segments()[seg_id];
        if resistance_bracket(segment, mat) <= 0.0 {
            warnings.push(format!(
                "barrier resistance bracket of segment {seg_id} is not positive; ΔR will be nonpositive"
            ));
        }

        // Post-void phase.
        let start = Instant::now();
        let post = assemble_postvoid(&self.sys, node, mat, &x_nuc)?;
        result.timings.assembly_s += start.elapsed().as_secs_f64();
        let start = Instant::now();
        let grid = TimeGrid::uniform(cfg.horizon_post * shift.tau_post, cfg.steps_post)?;
        let sigma_post = if cfg.fastem { 0.0 } else { 1.0 / shift.t_shift_post() };
        let mut runner = PhaseRunner::new(&post, cfg, sigma_post, cfg.fdm_substeps_post)?;
        result.order_post = runner.order();
        let bulk = mat.bulk_modulus;
        let mut times = Vec::with_capacity(grid.times().len());
        let mut states = Vec::with_capacity(grid.times().len());
        let mut residuals = Vec::with_capacity(grid.times().len());
        let mut volumes = Vec::with_capacity(grid.times().len());
        let mut delta_r = Vec::with_capacity(grid.times().len());
        // Voids do not heal: once σ_void dips below zero near steady state the
        // volume recedes slightly, but ΔR follows the largest volume reached.
        let mut v_peak = f64::NEG_INFINITY;
        let mut record = |runner: &PhaseRunner, t: f64| {
            let v = -runner.weighted_sum() / bulk;
            v_peak = v_peak.max(v);
            times.push(t_nuc + t);
            states.push(runner.rows(rows.as_deref()));
            residuals.push(runner.residual());
            volumes.push(v);
            delta_r.push(resistance_change(v_peak, segment, mat));
        };
        record(&runner, 0.0);
        for w in grid.times().windows(2) {
            runner.advance(w[0], w[1])?;
            record(&runner, w[1]);
        }
        result.timings.postvoid_s = start.elapsed().as_secs_f64();

        let has_residual = cfg.solver == SolverKind::Ei;
        result.trajectory_post = Some(StressTrajectory {
            times,
            states,
            residual_rel: has_residual.then_some(residuals),
            solver: cfg.solver.tag(),
            rows,
        });
        result.t_nuc = Some(t_nuc);
        result.nucleation_node = Some(node);
        result.voided_segment = Some(seg_id);
        result.void_volume = volumes;
        result.delta_r = delta_r;
        result.warnings = warnings;
        Ok(result)
    }
}

/// Builds the tree's system and runs both phases.
pub fn simulate_two_phase(tree: &InterconnectTree, cfg: &EngineConfig) -> Result<SimulationResult> {
    Simulator::new(tree, cfg.points_per_segment)?.run(cfg)
}

struct NucleationOutcome {
    trajectory: StressTrajectory,
    /// (t_nuc, grid index, full state at t_nuc).
    crossing: Option<(f64, usize, Vec<f64>)>,
}

fn run_nucleation(
    runner: &mut PhaseRunner,
    grid: &TimeGrid,
    rows: Option<&[usize]>,
    detect_rows: &[usize],
    sigma_crit: f64,
) -> Result<NucleationOutcome> {
    let solver = runner.tag();
    let with_residual = solver == SolverTag::EiRakrylov;
    let mut times = vec![0.0];
    let mut states = vec![runner.rows(rows)];
    let mut residuals = vec![runner.residual()];
    let finish = |times, states, residuals: Vec<f64>, rows: Option<&[usize]>| StressTrajectory {
        times,
        states,
        residual_rel: with_residual.then_some(residuals),
        solver,
        rows: rows.map(<[usize]>::to_vec),
    };

    let start_probe = runner.rows(Some(detect_rows));
    if let Some(i) = argmax(&start_probe).filter(|&i| start_probe[i] >= sigma_crit) {
        let x = runner.full_state();
        return Ok(NucleationOutcome {
            trajectory: finish(times, states, residuals, rows),
            crossing: Some((0.0, detect_rows[i], x)),
        });
    }

    let substeps = runner.substeps();
    let mut prev_probe = start_probe;
    let mut prev_full = if runner.needs_previous_state() { Some(runner.full_state()) } else { None };
    for w in grid.times().windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            let t0 = w[0] + s as f64 * h;
            let t1 = if s + 1 == substeps { w[1] } else { w[0] + (s + 1) as f64 * h };
            runner.advance(t0, t1)?;
            let probe = runner.rows(Some(detect_rows));
            let i = argmax(&probe).unwrap();
            if probe[i] >= sigma_crit {
                let (t_nuc, x_nuc) = runner.refine(t0, t1, &prev_probe, &probe, i, detect_rows, sigma_crit, prev_full.as_deref())?;
                let node = detect_rows[runner.crossing_index(&x_nuc, detect_rows, i)];
                if t_nuc > *times.last().unwrap() {
                    times.push(t_nuc);
                    states.push(match rows {
                        Some(r) => r.iter().map(|&j| x_nuc[j]).collect(),
                        None => x_nuc.clone(),
                    });
                    residuals.push(runner.residual_at(t_nuc)?);
                }
                return Ok(NucleationOutcome {
                    trajectory: finish(times, states, residuals, rows),
                    crossing: Some((t_nuc, node, x_nuc)),
                });
            }
            prev_probe = probe;
            if let Some(p) = prev_full.as_mut() {
                match runner.current_full() {
                    Some(x) => p.copy_from_slice(x),
                    None => *p = runner.full_state(),
                }
            }
        }
        times.push(w[1]);
        states.push(runner.rows(rows));
        residuals.push(runner.residual());
    }
    Ok(NucleationOutcome { trajectory: finish(times, states, residuals, rows), crossing: None })
}

/// Tree-node rows of a reduced state as one dense product: rows = M·y + c.
struct NodeMap {
    m: DMatrix<f64>,
    offset: DVector<f64>,
}

impl NodeMap {
    fn new(columns: &[Vec<f64>], scale: f64, minus: Option<&[f64]>, n_nodes: usize) -> Self {
        let m = DMatrix::from_fn(n_nodes, columns.len(), |i, j| scale * columns[j][i]);
        let offset = DVector::from_fn(n_nodes, |i, _| minus.map_or(0.0, |f| -f[i]));
        Self { m, offset }
    }

    /// True when `rows` is exactly the tree-node block 0..n_nodes.
    fn covers(&self, rows: &[usize]) -> bool {
        rows.len() == self.m.nrows() && rows.first().is_none_or(|&r| r == 0) && rows.last().is_none_or(|&r| r + 1 == rows.len())
    }

    fn apply(&self, y: &DVector<f64>) -> Vec<f64> {
        let mut out = self.offset.clone();
        out.gemv(1.0, &self.m, y, 1.0);
        out.data.into()
    }
}

/// One phase of one solver, advanced over increasing local times.
enum PhaseRunner<'a> {
    /// Drive and initial state are both zero: the stress stays at zero.
    Quiescent { n: usize, tag: SolverTag },
    Fdm {
        stepper: BackwardEulerStepper<'a>,
        weights: &'a [f64],
        substeps: usize,
    },
    Ext {
        model: ReducedModel,
        nodes: NodeMap,
        prop: ReducedPropagator,
        x: DVector<f64>,
        x0: DVector<f64>,
        vt_w: DVector<f64>,
        integrator: ReducedIntegrator,
    },
    Ei {
        model: EiModel,
        nodes: NodeMap,
        z: DVector<f64>,
        propagator: Option<(f64, DMatrix<f64>)>,
        vt_w: DVector<f64>,
        w_f: f64,
        beta: f64,
    },
}

impl<'a> PhaseRunner<'a> {
    fn new(sys: &'a LtiSystem, cfg: &EngineConfig, sigma: f64, substeps: usize) -> Result<Self> {
        let quiescent = sys.x0.iter().all(|&v| v == 0.0) && sys.drive().iter().all(|&v| v == 0.0);
        if quiescent {
            return Ok(PhaseRunner::Quiescent { n: sys.n(), tag: cfg.solver.tag() });
        }
        Ok(match cfg.solver {
            SolverKind::Fdm => PhaseRunner::Fdm {
                stepper: BackwardEulerStepper::new(sys),
                weights: &sys.control_volume,
                substeps,
            },
            SolverKind::Ext => {
                let model = extended_rational_arnoldi(sys, sigma, cfg.q, &sys.x0)?;
                let prop = ReducedPropagator::for_model(&model, cfg.ext_integrator);
                let vt_w = DVector::from_iterator(model.order(), model.v.iter().map(|c| dot(c, &sys.control_volume)));
                let x0 = model.x0_h.clone();
                let nodes = NodeMap::new(&model.v, 1.0, None, sys.n_tree_nodes);
                PhaseRunner::Ext { x: x0.clone(), x0, model, nodes, prop, vt_w, integrator: cfg.ext_integrator }
            }
            SolverKind::Ei => {
                let model = EiModel::build(sys, cfg.q, sigma)?;
                let k = model.order();
                let mut z = DVector::zeros(k);
                if k > 0 {
                    z[0] = 1.0;
                }
                let (vt_w, beta) = match &model.basis {
                    Some(b) => (DVector::from_vec(b.project(&sys.control_volume)), b.beta),
                    None => (DVector::zeros(0), 0.0),
                };
                let w_f = dot(&sys.control_volume, &model.f);
                let columns = model.basis.as_ref().map_or(&[][..], |b| &b.v[..]);
                let nodes = NodeMap::new(columns, beta, Some(&model.f), sys.n_tree_nodes);
                PhaseRunner::Ei { model, nodes, z, propagator: None, vt_w, w_f, beta }
            }
        })
    }

    fn tag(&self) -> SolverTag {
        match self {
            PhaseRunner::Quiescent { tag, .. } => *tag,
            PhaseRunner::Fdm { .. } => SolverTag::Fdm,
            PhaseRunner::Ext { .. } => SolverTag::ExtRakrylov,
            PhaseRunner::Ei { .. } => SolverTag::EiRakrylov,
        }
    }

    fn order(&self) -> Option<usize> {
        match self {
            PhaseRunner::Ext { model, .. } => Some(model.order()),
            PhaseRunner::Ei { model, .. } => Some(model.order()),
            _ => None,
        }
    }

    fn substeps(&self) -> usize {
        match self {
            PhaseRunner::Fdm { substeps, .. } => *substeps,
            _ => 1,
        }
    }

    /// Runners without continuous evaluation interpolate the state at t_nuc.
    fn needs_previous_state(&self) -> bool {
        match self {
            PhaseRunner::Fdm { .. } => true,
            PhaseRunner::Ext { integrator, .. } => *integrator == ReducedIntegrator::BackwardEuler,
            _ => false,
        }
    }

    /// Step from local time t0 to t1 (t0 is the current time).
    fn advance(&mut self, t0: f64, t1: f64) -> Result<()> {
        let h = t1 - t0;
        match self {
            PhaseRunner::Quiescent { .. } => {}
            PhaseRunner::Fdm { stepper, substeps, .. } => {
                let _ = substeps;
                stepper.step(h)?;
            }
            PhaseRunner::Ext { prop, x, .. } => {
                *x = prop.step(x, h)?;
            }
            PhaseRunner::Ei { model, z, propagator, .. } => {
                if model.order() > 0 {
                    let reuse = matches!(propagator, Some((h_old, _)) if (h - *h_old).abs() <= 1e-12 * *h_old);
                    if !reuse {
                        *propagator = Some((h, small_matrix_exp(&model.h_hat, h)?));
                    }
                    *z = &propagator.as_ref().unwrap().1 * &*z;
                }
            }
        }
        Ok(())
    }

    /// Stored rows of the current state (all unknowns when `rows` is None).
    fn rows(&self, rows: Option<&[usize]>) -> Vec<f64> {
        match (self, rows) {
            (PhaseRunner::Quiescent { n, .. }, r) => vec![0.0; r.map_or(*n, <[usize]>::len)],
            (PhaseRunner::Fdm { stepper, .. }, Some(r)) => r.iter().map(|&i| stepper.state()[i]).collect(),
            (PhaseRunner::Fdm { stepper, .. }, None) => stepper.state().to_vec(),
            (PhaseRunner::Ext { nodes, x, .. }, Some(r)) if nodes.covers(r) => nodes.apply(x),
            (PhaseRunner::Ext { model, x, .. }, Some(r)) => model.expand_rows(x, r),
            (PhaseRunner::Ext { model, x, .. }, None) => model.expand(x),
            (PhaseRunner::Ei { nodes, z, .. }, Some(r)) if nodes.covers(r) => nodes.apply(z),
            (PhaseRunner::Ei { model, z, .. }, Some(r)) => model.rows_from_z(z, r),
            (PhaseRunner::Ei { model, z, .. }, None) => model.state_from_z(z),
        }
    }

    fn full_state(&self) -> Vec<f64> {
        self.rows(None)
    }

    /// Borrowed full state, for runners that store one.
    fn current_full(&self) -> Option<&[f64]> {
        match self {
            PhaseRunner::Fdm { stepper, .. } => Some(stepper.state()),
            _ => None,
        }
    }

    /// wᵀσ for the current state.
    fn weighted_sum(&self) -> f64 {
        match self {
            PhaseRunner::Quiescent { .. } => 0.0,
            PhaseRunner::Fdm { stepper, weights, .. } => dot(weights, stepper.state()),
            PhaseRunner::Ext { x, vt_w, .. } => vt_w.dot(x),
            PhaseRunner::Ei { z, vt_w, w_f, beta, model, .. } => {
                if model.order() == 0 {
                    -*w_f
                } else {
                    *beta * vt_w.dot(z) - *w_f
                }
            }
        }
    }

    fn residual(&self) -> f64 {
        match self {
            PhaseRunner::Ei { model, z, .. } => model.residual(z).1,
            _ => 0.0,
        }
    }

    fn residual_at(&self, t: f64) -> Result<f64> {
        match self {
            PhaseRunner::Ei { model, .. } => Ok(model.residual(&model.z(t)?).1),
            _ => Ok(0.0),
        }
    }

    /// Node rows at an arbitrary local time (continuous runners only).
    fn rows_at(&self, t: f64, rows: &[usize]) -> Result<Vec<f64>> {
        match self {
            PhaseRunner::Ext { model, nodes, prop, x0, .. } => {
                let x = prop.evaluate(x0, t)?;
                Ok(if nodes.covers(rows) { nodes.apply(&x) } else { model.expand_rows(&x, rows) })
            }
            PhaseRunner::Ei { model, nodes, .. } => {
                if t == 0.0 {
                    let x = model.state(0.0)?;
                    return Ok(rows.iter().map(|&r| x[r]).collect());
                }
                let z = model.z(t)?;
                Ok(if nodes.covers(rows) { nodes.apply(&z) } else { model.rows_from_z(&z, rows) })
            }
            _ => unreachable!("interpolating runners have no continuous evaluation"),
        }
    }

    fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        match self {
            PhaseRunner::Ext { model, prop, x0, .. } => Ok(model.expand(&prop.evaluate(x0, t)?)),
            PhaseRunner::Ei { model, .. } => model.state(t),
            _ => unreachable!("interpolating runners have no continuous evaluation"),
        }
    }

    /// Crossing time inside (t0, t1] and the full state there.
    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        t0: f64,
        t1: f64,
        prev_probe: &[f64],
        probe: &[f64],
        i: usize,
        detect_rows: &[usize],
        sigma_crit: f64,
        prev_full: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        if let Some(prev) = prev_full {
            let t = interpolate_crossing(t0, t1, prev_probe[i], probe[i], sigma_crit);
            let frac = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
            let cur = self.full_state();
            let x = prev.iter().zip(&cur).map(|(a, b)| a + frac * (b - a)).collect();
            return Ok((t, x));
        }
        // Illinois false position on g(t) = max_nodes σ(t) − σ_crit.
        let g = |t: f64| -> Result<f64> {
            let v = self.rows_at(t, detect_rows)?;
            Ok(v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - sigma_crit)
        };
        let (mut a, mut b) = (t0, t1);
        let mut ga = prev_probe.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - sigma_crit;
        let mut gb = probe[i] - sigma_crit;
        let mut side = 0i8;
        for _ in 0..200 {
            if gb == 0.0 || (b - a) <= 1e-13 * b.abs() {
                break;
            }
            let c = if ga < 0.0 && gb > 0.0 { (a * gb - b * ga) / (gb - ga) } else { 0.5 * (a + b) };
            let c = if c <= a || c >= b { 0.5 * (a + b) } else { c };
            let gc = g(c)?;
            if gc >= 0.0 {
                b = c;
                gb = gc;
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            } else {
                a = c;
                ga = gc;
                if side == -1 {
                    gb *= 0.5;
                }
                side = -1;
            }
        }
        Ok((b, self.state_at(b)?))
    }

    /// Node index (into `detect_rows`) holding the maximum at the crossing.
    fn crossing_index(&self, x: &[f64], detect_rows: &[usize], fallback: usize) -> usize {
        let vals: Vec<f64> = detect_rows.iter().map(|&r| x[r]).collect();
        argmax(&vals).unwrap_or(fallback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{SegmentSpec, GeneratorConfig, generate_synthetic_tree};

    const UM: f64 = 1e-6;

    fn traj(times: Vec<f64>, states: Vec<Vec<f64>>) -> StressTrajectory {
        StressTrajectory { times, states, residual_rel: None, solver: SolverTag::Fdm, rows: None }
    }

    #[test]
    fn shift_time_identity_and_scaling() {
        let mut mat = MaterialParams::default();
        mat.diffusivity_base = 1.0;
        mat.bulk_modulus = 1.0;
        mat.atomic_volume = 1.0;
        mat.boltzmann = 1.0;
        mat.temperature = 1.0;
        let t = InterconnectTree::grow(&[SegmentSpec::new(0, PI, 1.0, 1.0, 0.0)], mat).unwrap();
        let s = estimate_shift_times(&t);
        assert!((s.tau_nuc - 1.0).abs() < 1e-15);
        let t2 = InterconnectTree::grow(&[SegmentSpec::new(0, 2.0 * PI, 1.0, 1.0, 0.0)], mat).unwrap();
        assert!((estimate_shift_times(&t2).tau_nuc - 4.0).abs() < 1e-14);
    }

    #[test]
    fn path_post_shift_is_nine_times_nucleation() {
        let specs: Vec<_> = (0..3).map(|i| SegmentSpec::new(i, 5.0 * UM, 0.5 * UM, 0.2 * UM, 1e10)).collect();
        let t = InterconnectTree::grow(&specs, MaterialParams::default()).unwrap();
        let s = estimate_shift_times(&t);
        assert!((s.tau_post / s.tau_nuc - 9.0).abs() < 1e-12);
    }

    #[test]
    fn detection_cases() {
        let tr = traj(vec![0.0, 100.0], vec![vec![0.0, -1.0], vec![2e8, -3.0]]);
        let n = detect_nucleation(&tr, 1e8).unwrap();
        assert!((n.t_nuc - 50.0).abs() < 1e-12);
        assert_eq!(n.node, 0);
        assert!(detect_nucleation(&tr, 3e8).is_none());
        let exact = traj(vec![0.0, 10.0, 20.0], vec![vec![0.0], vec![1e8], vec![2e8]]);
        assert_eq!(detect_nucleation(&exact, 1e8).unwrap().t_nuc, 10.0);
        let tie = traj(vec![0.0, 1.0], vec![vec![0.0, 0.0], vec![5.0, 5.0]]);
        assert_eq!(detect_nucleation(&tie, 1.0).unwrap().node, 0);
    }

    #[test]
    fn void_volume_cases() {
        let mat = MaterialParams::default();
        let t = InterconnectTree::grow(&[SegmentSpec::new(0, 10.0 * UM, 0.5 * UM, 0.2 * UM, 0.0)], mat).unwrap();
        let sys = assemble_nucleation(&t, 3).unwrap();
        assert_eq!(void_volume(&[0.0; 3], &sys, &t), 0.0);
        let full = vec![-mat.bulk_modulus; 3];
        let lwh = 10.0 * UM * 0.5 * UM * 0.2 * UM;
        assert!((void_volume(&full, &sys, &t) - lwh).abs() <= 1e-12 * lwh);
        // Nodes 0, 1 are the ends, index 2 the midpoint: trapezoid rule.
        let profile = [1e8, -3e8, 2e8];
        let h = 5.0 * UM;
        let area = 0.5 * UM * 0.2 * UM;
        let trapezoid = area * h * (1e8 / 2.0 + 2e8 + -3e8 / 2.0);
        let expected = -trapezoid / mat.bulk_modulus;
        assert!((void_volume(&profile, &sys, &t) - expected).abs() <= 1e-12 * expected.abs());
        let split = void_volume_by_segment(&profile, &sys, &t);
        assert!((split[0] - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn resistance_change_cases() {
        let mut mat = MaterialParams::default();
        mat.critical_void_volume = Some(1e-20);
        let t = InterconnectTree::grow(&[SegmentSpec::new(0, 10.0 * UM, 0.5 * UM, 0.2 * UM, 0.0)], mat).unwrap();
        let s = &t.segments()[0];
        assert_eq!(resistance_change(1e-20, s, &mat), 0.0);
        let one = resistance_change(1e-20 + 1e-21, s, &mat);
        let two = resistance_change(1e-20 + 2e-21, s, &mat);
        assert!((two - 2.0 * one).abs() <= 1e-12 * two);
        // Hand arithmetic for a 1e-20 m³ excess.
        let len = 1e-20 / (0.5e-6 * 0.2e-6);
        let ta = 2e-6 / (5e-9 * (2.0 * 0.2e-6 + 0.5e-6));
        let cu = 2.25e-8 / (0.2e-6 * 0.5e-6);
        let expected = len * (ta - cu);
        let got = resistance_change(2e-20, s, &mat);
        assert!((got - expected).abs() <= 1e-12 * expected);
        assert!((got - 4.4422e1).abs() < 1e-2);
        mat.critical_void_volume = None;
        assert!((critical_void_volume(s, &mat) - 0.25e-12 * 0.2e-6).abs() < 1e-30);
    }

    #[test]
    fn no_nucleation_without_current() {
        let t = generate_synthetic_tree(&GeneratorConfig::new(1, 42)).unwrap();
        let specs_tree = InterconnectTree::grow(
            &[SegmentSpec::new(0, t.segments()[0].length, 0.5 * UM, 0.2 * UM, 0.0)],
            MaterialParams::default(),
        )
        .unwrap();
        for solver in [SolverKind::Fdm, SolverKind::Ext, SolverKind::Ei] {
            let r = simulate_two_phase(&specs_tree, &EngineConfig::new(solver)).unwrap();
            assert!(r.t_nuc.is_none());
            assert_eq!(r.delta_r_final(), 0.0);
        }
    }

    #[test]
    fn infinite_critical_stress_is_single_phase() {
        let t = generate_synthetic_tree(&GeneratorConfig::new(5, 1)).unwrap();
        let mut cfg = EngineConfig::new(SolverKind::Ei);
        cfg.sigma_crit = Some(f64::INFINITY);
        let r = simulate_two_phase(&t, &cfg).unwrap();
        assert!(r.t_nuc.is_none() && r.trajectory_post.is_none());
        assert_eq!(r.delta_r_final(), 0.0);
        assert_eq!(r.trajectory_nuc.len(), 101);
    }
}
