use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps these onto exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input in {context}: {message}")]
    Format { context: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    /// 2 usage, 3 I/O, 4 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Io { .. } => 3,
            _ => 4,
        }
    }
}
