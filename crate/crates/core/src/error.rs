use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core augmentation primitives.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("downsample factor {factor} does not divide {height}x{width}")]
    BadFactor {
        factor: usize,
        height: usize,
        width: usize,
    },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("no feasible placement for region in background")]
    NoFeasiblePlacement,
    #[error("inpainting backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("variant mismatch: backend {backend} ({variant}) {reason}")]
    VariantMismatch {
        backend: String,
        variant: String,
        reason: &'static str,
    },
    #[error("background bucket `{bucket}` has {available} images, {requested} requested per condition")]
    PoolExhausted {
        bucket: String,
        available: usize,
        requested: usize,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("invalid manifest record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("invalid selection policy: {0}")]
    InvalidPolicy(String),
    #[error("inconsistent method set in ranking record for set `{0}`")]
    InconsistentMethodSet(String),
    #[error("ranks are not a permutation of 1..{k}: {ranks:?}")]
    InvalidPermutation { k: usize, ranks: Vec<u32> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("{path}:{line}: {source}")]
    Manifest {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
