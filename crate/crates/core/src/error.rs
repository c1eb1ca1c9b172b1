use std::path::Path;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two shapes that must agree do not.
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A single shape violates an operation's requirements.
    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    /// A scalar argument is outside its valid domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An API contract was violated (wrong call order, missing gradient, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file's bytes do not match the expected format.
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    /// I/O failure with the offending path attached.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
