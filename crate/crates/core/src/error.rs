use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A configuration field violates one of its invariants.
    #[error("invalid configuration: `{field}` {reason}")]
    Validation { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("label distribution is empty")]
    EmptyDataset,

    #[error("cannot aggregate an empty set of model updates")]
    EmptyAggregation,

    #[error("exact scheduler supports at most {max} UEs, instance has {actual}")]
    InstanceTooLarge { max: usize, actual: usize },

    #[error("instance line {line}: {reason}")]
    InstanceParse { line: usize, reason: String },

    #[error("metrics schema mismatch: {0}")]
    Schema(String),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
