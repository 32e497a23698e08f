//! Crate-wide error type.

use crate::taxonomy::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("taxonomy proposal rejected: {0}")]
    Hierarchy(ValidationReport),

    #[error("annotator backend: {0}")]
    Backend(String),

    #[error("labels contain a single class; both classes required")]
    SingleClass,

    #[error("key sets differ: {0}")]
    KeyMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
