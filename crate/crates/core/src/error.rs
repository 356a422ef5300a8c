//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

/// Errors produced anywhere in the audit pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("injection error: {0}")]
    Injection(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("runs are not comparable: {0}")]
    Comparability(String),

    #[error("partial run: {completed} of {total} cells completed")]
    PartialRun { completed: usize, total: usize },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code: 0 success, 2 validation, 3 transport, 4 partial run,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Contract(_) => 2,
            Error::Transport { .. } | Error::Protocol(_) => 3,
            Error::PartialRun { .. } => 4,
            _ => 1,
        }
    }
}
