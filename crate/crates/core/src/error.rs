use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("duplicate reserved token `{0}`")]
    DuplicateReserved(String),

    #[error("out-of-vocabulary token `{token}` in {path}:{line}")]
    OutOfVocabulary {
        token: String,
        path: PathBuf,
        line: usize,
    },

    #[error("category {category} is out of range for k = {k}")]
    CategoryOutOfRange { category: usize, k: usize },

    #[error("token id {id} is out of range for vocabulary size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("non-finite value at step {step} in {component}")]
    NonFinite { component: &'static str, step: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} not found; expected {}", path.display())]
    MissingInput { what: String, path: PathBuf },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("every child of round {round} is invalid")]
    NoValidChild { round: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
