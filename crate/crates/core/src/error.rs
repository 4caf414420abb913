use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("{0} did not converge within {1} iterations")]
    NoConvergence(&'static str, usize),

    #[error("value {value} outside the conjugate domain of {kind}")]
    Domain { kind: &'static str, value: f64 },

    #[error("support violation: {0}")]
    Support(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short category tag; the CLI maps it to an exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::InvalidParam(_) => "input",
            Error::NotSymmetric(_) | Error::NotPsd(_) | Error::Singular => "linalg",
            Error::NoConvergence(..) => "convergence",
            Error::Domain { .. } | Error::Support(_) => "domain",
            Error::NonFinite(_) => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => "io",
        }
    }
}
