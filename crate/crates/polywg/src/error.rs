//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing configuration (mesh level out of range, bad flags, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A cell violates a geometric precondition.
    #[error("geometry error on cell {cell}: {message}")]
    Geometry { cell: usize, message: String },

    /// The constrained gradient space failed to satisfy its defining constraints.
    #[error("constraint failure on cell {cell}: {message} (residual {residual:.3e})")]
    Constraint {
        cell: usize,
        residual: f64,
        message: String,
    },

    /// Linear solver breakdown or non-convergence.
    #[error("solver error: {message}")]
    Solver {
        message: String,
        residual_history: Vec<f64>,
    },

    /// An internal consistency check failed; indicates a bug, not bad input.
    #[error("internal consistency error: {0}")]
    Internal(String),

    /// Convergence rates did not meet the requested verification targets.
    #[error("verification failed: {0}")]
    Verify(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub fn solver(msg: impl Into<String>) -> Self {
        Error::Solver {
            message: msg.into(),
            residual_history: Vec::new(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Verify(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
