use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = XrdsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum XrdsError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed metadata in {path}: {message}")]
    Metadata { path: PathBuf, message: String },

    #[error("plane `{plane}` in {path}: expected {expected} bytes, found {found}")]
    PayloadSize {
        plane: String,
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("plane `{plane}` contains a non-finite value at index {index}")]
    NonFinite { plane: String, index: usize },

    #[error("plane `{plane}` value {value} at index {index} outside [{min}, {max}]")]
    OutOfRange {
        plane: String,
        index: usize,
        value: f32,
        min: f32,
        max: f32,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite values in {0}")]
    NonFiniteActivation(String),

    #[error("non-finite loss at step {step} (epoch {epoch}); batch: {batch}")]
    NonFiniteLoss {
        step: u64,
        epoch: u64,
        batch: String,
    },

    #[error("identical images have unbounded PSNR: {0}")]
    UnboundedPsnr(String),

    #[error("empty split `{0}`")]
    EmptySplit(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl XrdsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        XrdsError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            XrdsError::Dimension(_)
                | XrdsError::Config(_)
                | XrdsError::ConfigMismatch(_)
                | XrdsError::EmptySplit(_)
        )
    }
}
