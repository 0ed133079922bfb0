//! Exit-code policy: 0 success, 1 usage or config errors, 2 I/O failures.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum AppError {
    /// Bad arguments, configs, or input data. Exit code 1.
    Usage(String),
    /// Filesystem failures. Exit code 2.
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Io(_) => 2,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        AppError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(msg) => write!(f, "error: {msg}"),
            AppError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl From<preftour::Error> for AppError {
    fn from(err: preftour::Error) -> Self {
        AppError::Usage(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
