use thiserror::Error;

/// Errors raised by the estimation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible constraint system (rows {rows:?}): {reason}")]
    Infeasible { rows: Vec<usize>, reason: String },

    #[error("solver did not converge after {iterations} iterations (last iterate {last:?})")]
    NonConvergence { iterations: usize, last: Vec<f64> },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Config,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Data(_)
            | Error::Domain(_)
            | Error::Shape(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::Config(_) => ErrorClass::Config,
            Error::Infeasible { .. }
            | Error::NonConvergence { .. }
            | Error::NotSpd(_)
            | Error::NonFinite(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
