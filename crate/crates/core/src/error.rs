use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies on the camera plane (|z| = {z:e})")]
    DegenerateDepth { z: f64 },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid extrinsics: {0}")]
    InvalidExtrinsics(String),

    #[error("window side length must be odd and >= 1, got {0}")]
    InvalidWindow(usize),

    #[error("image dimensions differ: camera {camera:?} vs depth {depth:?}")]
    DimensionMismatch {
        camera: (usize, usize),
        depth: (usize, usize),
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot concatenate tensors with spatial dims {left:?} and {right:?}")]
    SpatialMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("incompatible architecture: {0}")]
    IncompatibleCombination(&'static str),

    #[error("point cloud blob of {len} bytes is not a multiple of 16")]
    TruncatedRecord { len: usize },

    #[error("calibration key `{0}` is missing")]
    MissingKey(String),

    #[error("calibration key `{key}`: {reason}")]
    MalformedMatrix { key: String, reason: String },

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("split needs {requested} frames but the dataset has {available}")]
    SplitOverflow { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidWindow(_)
            | Error::IncompatibleCombination(_)
            | Error::SplitOverflow { .. } => 1,
            Error::TruncatedRecord { .. }
            | Error::MissingKey(_)
            | Error::MalformedMatrix { .. }
            | Error::MalformedLine { .. }
            | Error::InvalidIntrinsics(_)
            | Error::InvalidExtrinsics(_)
            | Error::DimensionMismatch { .. }
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Image(_)
            | Error::Json(_) => 2,
            Error::DegenerateDepth { .. }
            | Error::ShapeMismatch(_)
            | Error::SpatialMismatch { .. }
            | Error::Diverged { .. } => 3,
        }
    }
}
