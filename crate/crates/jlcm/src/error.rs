//! Crate-wide error type.
//!
//! Variants are grouped by the caller's recovery story rather than by module:
//! `Config`/`Data`/`Domain` mean the inputs must change, `Numeric` means a
//! computation broke down on valid inputs, and `NonConvergence` is a fit that
//! ran out of iterations or could not produce a usable step.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or scenario configuration file could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    /// A data file violated the documented schema or internal consistency.
    #[error("data error: {0}")]
    Data(String),

    /// An argument was outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (singular matrix, non-finite value, ...).
    #[error("numerical error: {0}")]
    Numeric(String),

    /// The optimizer stopped without satisfying the convergence criteria.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line tools: input-shaped problems
    /// exit 1, a fit that failed to converge exits 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence(_) => 2,
            _ => 1,
        }
    }
}
