//! Crate-wide error and result types.

use std::path::PathBuf;

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by simulation, I/O, and evaluation routines.
///
/// Messages are written to stand alone on a single line so callers can
/// surface them directly (the CLI prints `error: <message>` and exits).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An underlying filesystem operation failed.
    #[error("i/o failure on {path}: {source}")]
    Io {
        /// File the operation was acting on.
        path: PathBuf,
        /// The originating error.
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not conform to the expected format.
    #[error("{path}:{line}: {message}")]
    Malformed {
        /// File being parsed.
        path: PathBuf,
        /// 1-based line number of the offending content (0 when unknown).
        line: usize,
        /// What was wrong.
        message: String,
    },

    /// Inputs violated a documented precondition of an operation.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// I/O error annotated with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Parse error at a known line of a file.
    pub fn malformed(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Precondition violation with a preformatted message.
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}
