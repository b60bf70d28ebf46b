use thiserror::Error;

/// Errors shared across the crate. `NonFinite` is mapped to its own process
/// exit code by the CLI so numerical failures are distinguishable from usage
/// errors in scripted sweeps.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {primitive}: {details}")]
    ShapeMismatch {
        primitive: &'static str,
        details: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("dataset format: {0}")]
    DatasetFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
}
