use std::path::PathBuf;

use crate::llmclient::LlmError;

/// Errors produced by the curation and evaluation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The bytes on disk are not in the expected binary layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    /// A value violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Text input could not be parsed. `line` is 1-based when known.
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// True for errors caused by bad input content rather than the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Format(_) | Error::Truncated { .. } | Error::Validation(_) | Error::Parse { .. } => true,
            Error::Llm(e) => e.is_validation(),
            Error::Io { .. } => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
