use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward state or gradient went non-finite.
    #[error("numeric error in layer {layer} at timestep {timestep}: {detail}")]
    Numeric {
        layer: usize,
        timestep: usize,
        detail: String,
    },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_err(offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        offset,
        detail: detail.into(),
    }
}
