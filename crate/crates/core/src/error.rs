use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("checkpoint is missing blocks: {}", .0.join(", "))]
    MissingBlocks(Vec<String>),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Short stable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::ShapeMismatch { .. } => "shape",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Usage(_) => "usage",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::MissingBlocks(_) => "missing-blocks",
            Error::Checkpoint(_) => "checkpoint",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
