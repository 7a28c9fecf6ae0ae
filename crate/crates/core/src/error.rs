use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the tracker, schedules, analysis and stream plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rejected input at step {step}: {reason}")]
    RejectedInput { step: u64, reason: String },

    #[error("threshold envelope unavailable: no score bound declared")]
    EnvelopeUnavailable,

    #[error("empty ledger")]
    EmptyLedger,

    #[error("{path}: row {row}: {message}")]
    Malformed {
        path: PathBuf,
        row: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stream mismatch: {0}")]
    StreamMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
