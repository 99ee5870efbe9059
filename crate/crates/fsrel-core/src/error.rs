//! Crate-wide error type. Variants map onto the CLI exit-code contract:
//! configuration problems exit 2, numerical aborts exit 3, data integrity
//! problems exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),

    /// Schema violation naming the offending record.
    #[error("schema violation at {record}: {reason}")]
    Schema { record: String, reason: String },

    /// Cross-reference or checksum failure in data.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Unknown category or predicate.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// Caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    /// Non-finite loss during training; carries a serialized episode dump.
    #[error("non-finite value in {context}")]
    NonFinite { context: String, episode_dump: String },

    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub fn schema(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            record: record.into(),
            reason: reason.into(),
        }
    }

    /// Exit code class for the CLI: 2 config, 3 numerical, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Vocab(_) | Error::Contract(_) | Error::Sampling(_) => 2,
            Error::NonFinite { .. } => 3,
            Error::Io(_)
            | Error::Json(_)
            | Error::Schema { .. }
            | Error::Integrity(_)
            | Error::Protocol(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
