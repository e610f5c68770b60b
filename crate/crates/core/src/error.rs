use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("archive format error: {0}")]
    Format(String),

    #[error("archive schema error in tensor `{tensor}`: {reason}")]
    Schema { tensor: String, reason: String },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("position error: {0}")]
    Position(String),

    #[error("sequence of length {len} exceeds max_positions {max}")]
    Length { len: usize, max: usize },

    #[error("layer {layer} out of range (model has {num_layers} encoder layers)")]
    Layer { layer: usize, num_layers: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("validation error for item `{id}`: {reason}")]
    Item { id: String, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("induction failed for {items}: {reason}")]
    Induction { items: String, reason: String },

    #[error("decode check failed for `{item}`: focus token at rank {rank}, required <= {k}")]
    Decode { item: String, rank: usize, k: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("nothing to report: {0}")]
    EmptyReport(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(tensor: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            tensor: tensor.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn item(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Item {
            id: id.into(),
            reason: reason.into(),
        }
    }
}
