use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pruning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{malformed} of {total} rows are malformed (rows {rows:?})")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        rows: Vec<usize>,
    },

    #[error("empty after filter: no interactions survive the rating threshold")]
    EmptyAfterFilter,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("inverse-HVP recursion diverged at step {step} (scale {scale}); increase the scale")]
    Diverged { step: usize, scale: f64 },

    #[error("dimension {dim} exceeds the explicit-Hessian limit {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("damped Hessian is singular")]
    Singular,

    #[error("score maps cover different samples; symmetric difference: {0:?}")]
    MismatchedIds(Vec<String>),

    #[error("budget {budget} is outside [1, {n}]")]
    Budget { budget: usize, n: usize },

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
