use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("untestable factor count k={k}: degrees of freedom {df} < 1")]
    Untestable { k: usize, df: i64 },

    #[error("non-finite state at step {step} of the simulation")]
    NonFinite { step: usize },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("unknown drift `{0}`")]
    UnknownDrift(String),

    #[error("no draws retained for statistic `{0}`")]
    NoDraws(String),

    #[error("malformed path file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
