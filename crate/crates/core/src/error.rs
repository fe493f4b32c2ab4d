use thiserror::Error;

/// Errors raised by the sparse multi-agent training stack.
#[derive(Debug, Error)]
pub enum MastError {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("tape not ready for backward: {0}")]
    TapeIncomplete(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, MastError>;

impl MastError {
    pub(crate) fn shapes(
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    ) -> Self {
        MastError::DimensionMismatch {
            context,
            left: format!("{}x{}", left.0, left.1),
            right: format!("{}x{}", right.0, right.1),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        MastError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
