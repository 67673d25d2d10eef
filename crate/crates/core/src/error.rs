use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The label sequence needs more frames than the input provides.
    #[error("infeasible alignment: {labels} labels need at least {required} frames, got {frames}")]
    Infeasible {
        labels: usize,
        required: usize,
        frames: usize,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("graft incompatible: front merges {front_dim} features, body expects {body_dim}")]
    GraftIncompatible { front_dim: usize, body_dim: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}
