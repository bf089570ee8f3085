use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardReplayed,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} outside class range 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite loss at iteration {iteration} ({stage})")]
    Diverged { iteration: usize, stage: String },
    #[error("malformed file {path}: {detail} (byte offset {offset})")]
    Malformed {
        path: PathBuf,
        offset: u64,
        detail: String,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
