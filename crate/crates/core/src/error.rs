use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("expected a {expected} model, got {found}")]
    WrongVariant {
        expected: &'static str,
        found: &'static str,
    },

    #[error("backbone `{0}` is a descriptor only; no weights or forward pass are available")]
    BackboneUnavailable(String),

    #[error("AUC is undefined: scores contain {positives} positives and {negatives} negatives")]
    UndefinedAuc { positives: usize, negatives: usize },

    #[error("non-finite loss at epoch {epoch} (lr {lr:e}); batch: {}", .batch.join(", "))]
    NonFiniteLoss {
        epoch: usize,
        lr: f64,
        batch: Vec<String>,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
