use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no field of view found: peak vote {votes:.1} below {required:.1}")]
    NoFovFound { votes: f64, required: f64 },
    #[error("crop region is empty")]
    EmptyCrop,
    #[error("invalid gaussian kernel: size {size}, sigma {sigma}")]
    InvalidKernelSpec { size: usize, sigma: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm in train mode needs a batch of at least 2")]
    DegenerateBatch,
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("spatial dimensions must be even, got {height}x{width}")]
    OddSpatialDim { height: usize, width: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    TooFewSamples {
        class: String,
        count: usize,
        k: usize,
    },
    #[error("failed to load image {path}: {message}")]
    ImageLoad { path: PathBuf, message: String },
    #[error("label sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("model parameters contain non-finite values")]
    UntrainedModel,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint fingerprint {found:#010x} does not match model {expected:#010x}")]
    FingerprintMismatch { expected: u32, found: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
