//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by simulation, reconstruction and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad dimensions, out-of-range parameters, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Two operands have incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An optimization produced a non-finite loss or gradient.
    /// `trace` holds the losses recorded up to the failure.
    #[error("optimization diverged at iteration {at}")]
    Diverged { at: usize, trace: Vec<f64> },

    /// Malformed file contents (manifest, checkpoint, binary dump).
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    pub(crate) fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
