//! Minimum-divergence portfolio construction under factor-exposure targets.
//!
//! Weights are found as the KL projection of a benchmark onto the set of
//! portfolios meeting linear exposure targets and constraints. Solvers:
//! damped dual Newton (equality and elastic targets), cyclic KL projections
//! (IPF and Bregman-Dykstra), proximal gradient for robust target sets, and
//! homotopy path following.

pub mod diagnostics;
pub mod error;
pub mod model;
pub mod newton;
pub mod numerics;
pub mod path;
pub mod projection;
pub mod report;
pub mod robust;

pub use diagnostics::{brute_force_oracle, kkt_check, kl_divergence, KktReport, OracleConfig, OracleMethod};
pub use error::{Error, Result};
pub use model::{
    effective_prior, feasibility_screen, shift_exposures, strip_intercept, validate_instance, ConstraintSet,
    FeasibilityVerdict, Instance, InterceptReport, LinearConstraint, TargetMode, TargetSpec, Violation, Weights,
};
pub use newton::{sensitivity, solve_elastic, solve_equality, NewtonConfig, Sensitivity};
pub use numerics::{log_partition, tilt, tilted_weights, DualPoint};
pub use path::{trace_path, Integrator, PathEvent, PathOptions, PathSample, PathTrace};
pub use projection::{
    project_halfspace, project_hyperplane, solve_dykstra, solve_dykstra_from, solve_ipf, DykstraState,
};
pub use report::{SolveReport, Status, TraceEntry};
pub use robust::{solve_robust, ProxConfig, RobustSet};
