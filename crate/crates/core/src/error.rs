use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[cfg(feature = "io")]
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid dimensions {width}x{height}: {reason}")]
    Dimensions {
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("mixed resolutions: {first} is {a}, {second} is {b}")]
    MixedResolutions {
        first: String,
        a: String,
        second: String,
        b: String,
    },

    #[error("empty manifest {0}")]
    EmptyManifest(PathBuf),

    #[error("invalid DDS: {0}")]
    Dds(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {what}")]
    IndexOutOfRange { index: usize, what: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} ({phase}): endpoint={loss_endpoint}, color={loss_color}")]
    NonFinite {
        step: usize,
        phase: &'static str,
        loss_endpoint: f64,
        loss_color: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
