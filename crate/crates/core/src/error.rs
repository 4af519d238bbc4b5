use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the co-design stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("design outside its space: {0}")]
    Domain(String),

    #[error("budget exhausted: requested {requested} units, {remaining} remaining")]
    Budget { requested: u64, remaining: u64 },

    #[error("accounting overflow: {0}")]
    Accounting(String),

    #[error("numeric failure: {message}")]
    Numeric {
        message: String,
        /// Parameter snapshot written at the point of failure, if any.
        snapshot: Option<PathBuf>,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            snapshot: None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
