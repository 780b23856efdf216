use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("coupling shape mismatch at level {level}: texture block {texture:?} vs geometry features {geometry:?}")]
    CouplingShape {
        level: usize,
        texture: Vec<usize>,
        geometry: Vec<usize>,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    IoPath {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Exit code convention used by the CLI: 1 for validation-type
    /// failures, 2 for I/O and format errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::ShapeMismatch { .. }
            | Error::CouplingShape { .. }
            | Error::Dataset(_)
            | Error::Validation(_)
            | Error::CheckpointMismatch(_) => 1,
            Error::ModelFormat(_)
            | Error::IoPath { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Image(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape_mismatch(context: &str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        context: context.to_string(),
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
