//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum MaaeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("numeric failure{}: {msg}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numeric { step: Option<u64>, msg: String },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("out of representable range: {0}")]
    Range(String),

    #[error("format error: {0}")]
    Format(String),
}

impl MaaeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        MaaeError::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        MaaeError::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        MaaeError::Numeric { step: None, msg: msg.into() }
    }

    /// Attach a training-step index to a numeric error, leaving others untouched.
    pub fn at_step(self, step: u64) -> Self {
        match self {
            MaaeError::Numeric { msg, .. } => MaaeError::Numeric { step: Some(step), msg },
            other => other,
        }
    }
}

impl From<serde_json::Error> for MaaeError {
    fn from(e: serde_json::Error) -> Self {
        MaaeError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MaaeError>;
