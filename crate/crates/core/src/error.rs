use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected colour space {expected}, got {actual}")]
    WrongColorSpace {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape is empty")]
    EmptyTape,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("missing file referenced by manifest: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("image format error: {0}")]
    Image(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint version mismatch: {0}")]
    CheckpointVersion(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::ShapeMismatch {
        op,
        detail: detail.into(),
    })
}
