use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: ParseLocation,
        message: String,
    },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where a malformed input was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseLocation {
    ByteOffset(u64),
    Line(u64),
}

impl std::fmt::Display for ParseLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseLocation::ByteOffset(o) => write!(f, "byte offset {o}"),
            ParseLocation::Line(l) => write!(f, "line {l}"),
        }
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
