use std::path::{Path, PathBuf};
use std::process::ExitCode;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: malformed files, inconsistent ids or names, unsupported
    /// solver/mode combinations.
    #[error("{0}")]
    Validation(String),

    /// The solver ran but did not deliver a usable optimum.
    #[error("{0}")]
    NotConverged(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => 1,
            CliError::NotConverged(_) => 2,
            CliError::Io { .. } => 3,
        })
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl From<egmu::Error> for CliError {
    fn from(e: egmu::Error) -> Self {
        use egmu::Error as E;
        match e {
            E::Validation(_)
            | E::DimensionMismatch { .. }
            | E::InvalidWeights(_)
            | E::InvalidConfig(_)
            | E::InvalidConstraint { .. }
            | E::InconsistentIntercept { .. }
            | E::DegeneratePrior { .. } => CliError::Validation(e.to_string()),
            _ => CliError::NotConverged(e.to_string()),
        }
    }
}
