use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {0}; depth must be positive")]
    InvalidDepth(f64),
    #[error("degenerate baseline: |t| = {0:e}")]
    DegenerateBaseline(f64),
    #[error("pixel ({x}, {y}) is outside a {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
