use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid constraint {index}: {reason}")]
    InvalidConstraint { index: usize, reason: String },

    #[error(
        "exposure column {column} is constant ({constant}) but its target is {target}; \
         the budget constraint makes the target unattainable"
    )]
    InconsistentIntercept {
        column: usize,
        constant: f64,
        target: f64,
    },

    #[error("previous weights must be strictly positive (entry {index} is {value})")]
    DegeneratePrior { index: usize, value: f64 },

    #[error("regularized system could not be factorized")]
    SingularSystem,

    #[error("no sign change found after {doublings} bracket doublings around {hint}")]
    NoSignChange { hint: f64, doublings: u32 },

    #[error("target {tau} outside the attainable open range ({min}, {max})")]
    TargetOutOfRange { tau: f64, min: f64, max: f64 },

    #[error("constraint direction is constant on the support")]
    DegenerateDirection,

    #[error("covariance is singular; null space has dimension {}", .null_space.ncols())]
    SingularCovariance { null_space: DMatrix<f64> },

    #[error("initial solve at the path start did not converge ({0})")]
    InfeasibleStart(String),

    #[error("path system became singular at lambda = {lambda}")]
    SingularAlongPath { lambda: f64 },

    #[error("oracle did not converge after {iterations} iterations (violation {violation:.3e})")]
    OracleNotConverged { iterations: usize, violation: f64 },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
