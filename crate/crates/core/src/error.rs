use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("crop larger than image: crop {size} on {width}x{height}")]
    CropTooLarge {
        size: usize,
        width: usize,
        height: usize,
    },

    #[error("empty sparse map")]
    EmptySparseMap,

    #[error("empty image")]
    EmptyImage,

    #[error("improper rotation (determinant {0:.6})")]
    ImproperRotation(f64),

    #[error("rotation is not orthonormal (max deviation {0:.3e})")]
    NonOrthonormalRotation(f64),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsic(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cloud file size {bytes} bytes is not a multiple of {record} bytes per record")]
    CloudSize { bytes: u64, record: usize },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
