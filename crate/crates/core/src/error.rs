use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("channel {channel}: {source}")]
    Channel {
        channel: usize,
        #[source]
        source: Box<CoreError>,
    },

    #[error("length mismatch: {pred} predicted frames vs {target} target frames")]
    LengthGap { pred: usize, target: usize },

    #[error("correlation undefined: zero variance")]
    ZeroVariance,

    #[error("non-finite loss in batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("malformed corpus entry {path}: {detail}")]
    Corpus { path: PathBuf, detail: String },

    #[error(transparent)]
    Nn(#[from] emg2artic_nn::NnError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(CoreError::InvalidArgument {
        op,
        detail: detail.into(),
    })
}
