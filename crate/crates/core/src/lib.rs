//! Decentralized affine-transformation coordination for leader-follower teams.
//!
//! Three leaders follow a planned planar affine transformation of their
//! reference positions. Every follower tracks a fixed convex combination of
//! three in-neighbors and ends up on the same transformation without knowing
//! it. The principal strains of the transformation bound how close any two
//! agents can get.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod formation;
pub mod generate;
pub mod kernel;
pub mod metrics;
pub mod phases;
pub mod safety;
pub mod scenario;
pub mod sim;

pub use formation::{
    build_formation, build_matrices, compute_alpha, compute_follower_weights, validate_config, verify_theorem2,
    AgentSpec, Coefficients, FormationError, FormationMatrices, ReferenceConfig, Role, SpectralReport,
    ValidationReport, Violation,
};
pub use kernel::{apply_at, assemble_jacobian, decompose_jacobian, euler_matrix, AtCoordinates, JacobianDecomposition, KernelError};
pub use metrics::{Corridor, RunMetrics};
pub use phases::{quintic_blend, Phase, PhaseSchedule, TranslationRamp};
pub use safety::{check_schedule_safety, min_reference_distance, min_scaling_bound, SafetyReport};
pub use sim::{run_simulation, AgentState, SimError, SimParams, SimTrace};
pub use scenario::{default_scenario_text, parse_scenario, Scenario, ScenarioError, ScenarioFile};
pub use bundle::{emit_bundle, format_sig9, read_bundle, BundleError, Manifest};
