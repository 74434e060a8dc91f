use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix at node {node} is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { node: usize, min_eig: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Newton stagnation: residual history {history:?}")]
    Stagnation { history: Vec<f64> },

    #[error("empty section at node {center} with height {height:e}; use a height above {floor:e}")]
    EmptySection {
        center: usize,
        height: f64,
        floor: f64,
    },

    #[error("boundary trace is not a single closed curve ({loops} loops, {open} open chains)")]
    DisconnectedBoundary { loops: usize, open: usize },

    #[error("value {value:e} outside the range [{lo:e}, {hi:e}] of G' on the working bracket")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of a numerical solver (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::Stagnation { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::OutOfRange { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
