//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor axis has the wrong extent (or violates a structural rule
    /// such as divisibility). `axis` names the offending axis.
    #[error("dimension error on axis `{axis}`: {detail}")]
    Dimension { axis: &'static str, detail: String },

    /// Malformed input while decoding a byte stream. `offset` is the byte
    /// position at which decoding failed.
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    /// The input is syntactically valid but uses a feature we do not handle.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Wrong channel count for a color operation.
    #[error("invalid channel count: expected {expected}, got {got}")]
    InvalidChannels { expected: usize, got: usize },

    /// An argument is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric computation produced non-finite values.
    #[error("numerical failure at iteration {iter}: {detail}")]
    Numerical { iter: usize, detail: String },

    /// A weights container did not provide exactly the parameter set the
    /// model architecture expects.
    #[error("parameter set mismatch: missing [{}], unexpected [{}]",
            missing.join(", "), unexpected.join(", "))]
    Parameters {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    /// A backward pass was invoked with a cache from a different forward.
    #[error("stale cache: {0}")]
    StaleCache(String),

    /// An image is too small for the requested operation.
    #[error("input too small: {0}")]
    TooSmall(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            detail: detail.into(),
        }
    }

    pub fn parse(offset: usize, detail: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
