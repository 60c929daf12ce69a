use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("only {available} complete (background, region) pairs for {requested} requested sets")]
    InsufficientCoverage { requested: usize, available: usize },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown set {0}")]
    UnknownSet(String),
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("set {set} already ranked in session {session}")]
    DuplicateSubmission { session: String, set: String },
    #[error("invalid ranking: {0}")]
    InvalidPermutation(String),
    #[error("no rankings stored")]
    EmptyStore,
    #[error("invalid review config: {0}")]
    InvalidConfig(String),
    #[error("corrupt store {path}: {detail}")]
    CorruptStore { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] polypaug_core::Error),
}

pub type Result<T> = std::result::Result<T, ReviewError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ReviewError {
    let path = path.into();
    move |source| ReviewError::Io { path, source }
}
