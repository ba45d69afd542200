use std::io;

use thiserror::Error;

/// Errors produced anywhere in the analysis, learning and retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample rate mismatch: bank expects {expected} Hz, clip is {found} Hz")]
    SampleRateMismatch { expected: f64, found: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fingerprint mismatch: {left} vs {right}")]
    FingerprintMismatch { left: String, right: String },

    #[error("unknown instrument code {0:?}")]
    UnknownInstrument(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("annotation rejected: {0}")]
    Annotation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("audio decoding failed: {0}")]
    Audio(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<hound::Error> for Error {
    fn from(err: hound::Error) -> Self {
        match err {
            hound::Error::IoError(e) => Error::Io(e),
            other => Error::Audio(other.to_string()),
        }
    }
}
