use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension too small: {0}")]
    DimensionTooSmall(String),

    #[error("invalid margin gamma = {gamma}: {reason}")]
    InvalidMargin { gamma: f64, reason: &'static str },

    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("rank deficient matrix `{name}`: smallest singular value {sigma_min:e} < {tol:e}")]
    RankDeficient {
        name: &'static str,
        sigma_min: f64,
        tol: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite score encountered ({0})")]
    NonFiniteScore(f64),

    #[error("similarity `{0}` has no analytic gradient")]
    UnsupportedSimilarity(&'static str),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn arg(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
