use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HelioError>;

#[derive(Debug, Error)]
pub enum HelioError {
    /// Input violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed knot vector: {0}")]
    Knots(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged: {0}")]
    Diverged(String),
}

impl HelioError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HelioError::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HelioError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        HelioError::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HelioError::Invalid(_) | HelioError::Shape(_) | HelioError::Knots(_)
        )
    }
}
