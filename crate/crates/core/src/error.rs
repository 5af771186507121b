use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad error class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or a violated precondition.
    Validation,
    /// The filesystem or another part of the environment failed.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {context} at row {row}")]
    NonFinite { context: String, row: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("empty group: no rows for label `{label}` at layer {layer}")]
    EmptyGroup { label: String, layer: usize },

    #[error("degenerate contrast `{contrast}` at layer {layer}: raw difference norm {norm:e} below threshold")]
    DegenerateContrast {
        contrast: String,
        layer: usize,
        norm: f64,
    },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("interpretation record field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("provider failed on item `{item_id}`: {message}")]
    Provider { item_id: String, message: String },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
