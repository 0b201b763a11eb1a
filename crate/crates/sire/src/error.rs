use std::path::PathBuf;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    VolumeFormat(#[from] VolumeFormatError),

    #[error(transparent)]
    WeightsFormat(#[from] WeightsFormatError),

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    /// Training diverged; carries the step index and the scale list in use.
    #[error("non-finite loss at sample {sample}: scales {scales:?}")]
    NonFiniteLoss { sample: usize, scales: Vec<f64> },
}

/// Failures while decoding the volume file format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum VolumeFormatError {
    #[error("unrecognised magic bytes (expected \"SIREVOL1\")")]
    BadMagic,
    #[error("header is not valid JSON or misses required fields: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?} (only \"f32\")")]
    UnsupportedDtype(String),
    #[error("unsupported byte order {0:?} (only \"little\")")]
    UnsupportedByteOrder(String),
    #[error("payload holds {actual} scalars but header dims require {expected}")]
    SizeMismatch { expected: usize, actual: usize },
}

/// Failures while decoding the weights file format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightsFormatError {
    #[error("unrecognised magic bytes (expected \"SIREWTS1\")")]
    BadMagic,
    #[error("header is not valid JSON or misses required fields: {0}")]
    BadHeader(String),
    #[error("payload holds {actual} scalars but manifest requires {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("manifest does not match the declared architecture: {0}")]
    ManifestMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
