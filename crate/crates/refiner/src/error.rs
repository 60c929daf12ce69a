use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum RefinerError {
    #[error("weights missing: {0}")]
    WeightsMissing(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("empty manifest: {0}")]
    EmptyManifest(&'static str),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("invalid refiner config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] polypaug_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = RefinerError> = std::result::Result<T, E>;
