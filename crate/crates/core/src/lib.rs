//! Electromigration stress simulation on interconnect trees.
//!
//! The crate discretizes the Korhonen stress-diffusion equation on a wire
//! tree into a linear time-invariant system and solves it with a
//! backward-Euler reference, an extended rational Arnoldi reduction, or a
//! rational Krylov exponential integrator. A coordinate-descent tuner picks
//! the reduction order and shift times against nucleation-time and
//! resistance-change errors.

pub mod discretization;
pub mod ei;
pub mod engine;
pub mod error;
pub mod expm;
pub mod ext;
pub mod fdm;
pub mod krylov;
pub mod sparse;
pub mod trajectory;
pub mod tree;
pub mod tuner;

pub use discretization::{
    assemble_nucleation, assemble_postvoid, diffusivity, drive_force, GridPoint, LtiSystem, Phase,
    DEFAULT_POINTS_PER_SEGMENT,
};
pub use ei::{ei_transient, residual_estimate, EiSolution};
pub use engine::{
    critical_void_volume, detect_nucleation, estimate_shift_times, resistance_bracket,
    resistance_change, simulate_two_phase, void_volume, void_volume_by_segment, EngineConfig,
    Nucleation, PhaseTimings, Probes, ShiftTimes, SimulationResult, Simulator, SolverKind,
};
pub use error::{EmError, Result};
pub use expm::small_matrix_exp;
pub use ext::{extended_rational_arnoldi, reduced_transient, ReducedIntegrator, ReducedModel};
pub use fdm::backward_euler;
pub use krylov::{rational_krylov_basis, KrylovBasis};
pub use trajectory::{SolverTag, StressTrajectory, TimeGrid};
pub use tree::{
    generate_synthetic_tree, parse_tree, tree_stats, GeneratorConfig, InterconnectTree,
    MaterialParams, NodeKind, Segment, SegmentSpec, TreeNode, TreeStats,
};
pub use tuner::{
    coordinate_descent, coordinate_descent_with, objective, percentage_error, reference_solution,
    Evaluation, Reference, ReferenceConfig, TunerConfig, TunerResult,
};
