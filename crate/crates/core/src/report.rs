use std::fmt;

use nalgebra::DVector;

use crate::model::Weights;

/// Terminal state of a solver run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIter,
    /// The dual ran off to infinity: the target is outside, or on the boundary
    /// of, the convex hull of the exposure rows.
    DivergedInfeasible,
    SingularSystem,
    MaxCycles,
    EmptyIntersectionSuspected,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "Converged",
            Status::MaxIter => "MaxIter",
            Status::DivergedInfeasible => "DivergedInfeasible",
            Status::SingularSystem => "SingularSystem",
            Status::MaxCycles => "MaxCycles",
            Status::EmptyIntersectionSuspected => "EmptyIntersectionSuspected",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the iteration trace.
///
/// Dual solvers record the gradient norm, the accepted step, `log Z` and the
/// dual objective. Projection solvers record the worst constraint violation
/// after each cycle and `KL(w‖b)` as the objective, with no `log Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub residual_norm: f64,
    pub step: f64,
    pub log_z: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub weights: Weights,
    /// Dual variables. One per factor for the dual solvers; one per constraint
    /// (equalities first, then half-spaces) for the projection solvers.
    pub theta: DVector<f64>,
    /// Quantity whose norm the stopping rule tests: the dual gradient for
    /// Newton, the subgradient distance vector for proximal gradient, and the
    /// signed per-constraint residuals for the projection schemes.
    pub residual: DVector<f64>,
    /// `target − achieved` for every targeted quantity.
    pub exposure_gap: DVector<f64>,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub status: Status,
}

impl SolveReport {
    pub fn is_converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual.norm()
    }
}
