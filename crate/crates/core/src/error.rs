use std::path::PathBuf;

use thiserror::Error;

use crate::stability::CertificationFailure;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("certification failed: {0}")]
    Certification(#[from] CertificationFailure),

    #[error("episode diverged at step {step}: state norm {norm:e}")]
    Diverged { step: usize, norm: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("batch failed: {0}")]
    Batch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, dimensions, targets).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Certification(_) | Error::Json(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<V, E = Error> = std::result::Result<V, E>;
