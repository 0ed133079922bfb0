//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A node sequence is not a valid permutation of the instance's nodes.
    #[error("invalid tour: {0}")]
    InvalidTour(String),

    /// The input declares a format this crate does not support.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// The input could not be parsed. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The instance exceeds the size bound of an exact solver.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// The requested operation does not apply to this preference model.
    #[error("wrong preference model: {0}")]
    WrongModel(String),

    /// A training configuration violates its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Malformed JSON in an instance or checkpoint file.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
