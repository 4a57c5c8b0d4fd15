//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("checksum mismatch in tensor block '{0}'")]
    ChecksumMismatch(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("encode out of bounds: {0}")]
    EncodeOutOfBounds(String),

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    #[error("sequence error: {0}")]
    Sequence(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code class for CLI front-ends: 2 for data errors,
    /// 3 for internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) => 3,
            _ => 2,
        }
    }
}
