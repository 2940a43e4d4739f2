//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("too short for one frame: {len} samples, window needs {window}")]
    TooShortForFrame { len: usize, window: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("zero-norm feature")]
    ZeroNormFeature,

    #[error("degenerate batch")]
    DegenerateBatch,

    #[error("non-finite gradient at {0}")]
    NonFiniteGradient(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("zero variance")]
    ZeroVariance,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("{path}: {detail}")]
    Format { path: String, detail: String },

    #[error("config hash mismatch: {0}")]
    ConfigHashMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
