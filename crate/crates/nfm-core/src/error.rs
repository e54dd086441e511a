//! Error type shared across the library and the CLI.
//!
//! Variants map onto the CLI's exit codes: [`Error::Invalid`] is a semantic
//! problem with otherwise well-formed inputs (exit 1), while [`Error::Io`]
//! and [`Error::Format`] cover unreadable or corrupted files (exit 2).

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The operating system refused or failed a file operation.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file was readable but its contents do not parse as the expected
    /// format (bad magic, truncated payload, malformed CSV/JSON, non-finite
    /// values, duplicate ids).
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Inputs parsed fine but violate a contract: mismatched dimensions,
    /// empty memory banks, inconsistent id sets, out-of-range parameters.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
