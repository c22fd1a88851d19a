use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = VlmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VlmError {
    /// Transport failure or non-success status; retried.
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),

    /// The service answered but not with the expected document; not retried.
    #[error("malformed endpoint response: {0}")]
    Malformed(String),

    #[error("unknown endpoint spec `{0}` (expected http(s)://..., mock:oracle, mock:luminance or replay:<path>)")]
    UnknownEndpoint(String),

    #[error("no recorded response for sample {0}")]
    NotRecorded(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] depthvision_core::Error),
}

impl VlmError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
