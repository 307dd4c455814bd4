use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty attention row")]
    EmptyAttentionRow,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input too short")]
    InputTooShort,

    #[error("trigger index out of range: nu={nu}, encoder frames={frames}")]
    TriggerOutOfRange { nu: usize, frames: usize },

    #[error("no valid alignment")]
    NoValidAlignment,

    #[error("search collapsed")]
    SearchCollapsed,

    #[error("session closed")]
    SessionClosed,

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownName {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),

    #[error("shape mismatch for tensor {name}: expected {expected:?}, found {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("cannot access {}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
