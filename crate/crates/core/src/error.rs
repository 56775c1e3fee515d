use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: rating {rating} outside [{min}, {max}]")]
    RatingOutOfRange {
        line: usize,
        rating: f64,
        min: f64,
        max: f64,
    },

    #[error("dataset contains no ratings")]
    EmptyDataset,

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{kind} index {index} out of range (size {len})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("divergence at user {user}, item {item}: {detail}")]
    Divergence {
        user: u32,
        item: u32,
        detail: String,
    },

    #[error("objective became non-finite after epoch {epoch}")]
    NonFiniteObjective { epoch: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "sample still violates the prediction constraint after {retries} retries; \
         increase kappa (currently {kappa})"
    )]
    RetryLimit { retries: usize, kappa: f64 },

    #[error("worker thread panicked")]
    WorkerPanic,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical procedure itself (as opposed to
    /// bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteObjective { .. } | Error::RetryLimit { .. }
        )
    }
}
