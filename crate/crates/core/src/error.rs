//! Error type shared by every module in this crate.

use std::path::Path;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two vectors (or a vector and an index) disagree on dimensionality.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A referenced item, identity, or index name does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// A file does not conform to its declared format.
    #[error("{path}: format error: {detail}")]
    Format { path: String, detail: String },

    /// A file is well-formed but its contents violate a data invariant.
    #[error("{path}: data error: {detail}")]
    Data { path: String, detail: String },

    /// A same-identity distance distribution cannot be formed because the
    /// identity has fewer than two images.
    #[error("empty distance distribution: identity {identity:?} of item {item_id:?} has fewer than 2 images")]
    EmptyDistribution { item_id: String, identity: String },

    #[error("{path}: i/o error: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn data(path: &Path, detail: impl Into<String>) -> Self {
        Error::Data {
            path: path.display().to_string(),
            detail: detail.into(),
        }
    }
}
