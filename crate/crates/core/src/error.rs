use std::path::PathBuf;

use thiserror::Error;

/// Errors shared across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("failed to encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("dimension mismatch in {what}: {expected_h}x{expected_w} vs {got_h}x{got_w}")]
    DimensionMismatch {
        what: &'static str,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("empty image")]
    EmptyImage,

    #[error("depth map has no valid (non-zero) pixels")]
    AllDepthMissing,

    #[error("prototype set inconsistent with region labeling: {0}")]
    MissingPrototypes(String),

    #[error("no labeled pixels")]
    NoLabeledPixels,

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    ) -> Self {
        Error::DimensionMismatch {
            what,
            expected_h: expected.0,
            expected_w: expected.1,
            got_h: got.0,
            got_w: got.1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
