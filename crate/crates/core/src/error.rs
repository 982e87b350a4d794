use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed, misaligned or out-of-contract input.
    Input,
    /// The computation itself failed (no convergence, rank deficiency).
    Numerical,
    /// A proven inequality failed to hold. Always a bug, never a data signal.
    Certificate,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("capacity error: dimension {dim} exceeds the dense limit of {limit}")]
    Capacity { dim: usize, limit: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error("rank deficiency: pivot {index} is {value:e} (not positive definite)")]
    RankDeficient { index: usize, value: f64 },

    #[error("ridge required: {0}")]
    RidgeRequired(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("bulk variance estimate did not reach a fixed point; iterates {trace:?}")]
    Estimation { trace: Vec<f64> },

    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    #[error("oracle inapplicable: {0}")]
    OracleInapplicable(String),

    #[error("certificate violation: {0}")]
    Certificate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Input(_)
            | Error::Alignment(_)
            | Error::Capacity { .. }
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Input,
            Error::RankDeficient { .. }
            | Error::RidgeRequired(_)
            | Error::NoConvergence { .. }
            | Error::Estimation { .. }
            | Error::DegenerateReference(_)
            | Error::OracleInapplicable(_) => ErrorClass::Numerical,
            Error::Certificate(_) => ErrorClass::Certificate,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
