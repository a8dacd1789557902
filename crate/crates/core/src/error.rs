use std::io;

use thiserror::Error;

/// Errors produced anywhere in the clustering engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("coefficient diagonal entry {index} is nonzero ({value:e})")]
    NonzeroDiagonal { index: usize, value: f64 },

    #[error("vertex {0} has zero degree")]
    IsolatedVertex(usize),

    #[error("class {class} has {size} member(s); at least 2 are required")]
    ClassTooSmall { class: usize, size: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
