//! Service-side and client-side error types.

use crate::protocol::ErrorBody;

/// Errors a query can fail with on the serving side.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("index not found: {0}")]
    IndexNotFound(String),

    #[error("unsupported modality: {0}; this service answers IMAGE queries only")]
    UnsupportedModality(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("item not found: {0}")]
    ItemNotFound(String),

    #[error("server failed to start: {0}")]
    Startup(String),
}

impl ServiceError {
    /// Stable machine-readable code used in the JSON error body.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::IndexNotFound(_) => "not_found",
            ServiceError::UnsupportedModality(_) => "unsupported_modality",
            ServiceError::InvalidArgument(_) => "invalid_argument",
            ServiceError::ItemNotFound(_) => "not_found",
            ServiceError::Startup(_) => "startup",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::IndexNotFound(_) | ServiceError::ItemNotFound(_) => 404,
            ServiceError::UnsupportedModality(_) | ServiceError::InvalidArgument(_) => 400,
            ServiceError::Startup(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
        }
    }
}

/// Errors on the client side of a remote query.
#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The request never produced an HTTP response.
    #[error("transport error contacting {endpoint}: {source}")]
    Transport {
        endpoint: String,
        #[source]
        source: reqwest::Error,
    },

    /// The server answered with a non-2xx status.
    #[error("remote error from {endpoint}: status {status}: {body}")]
    Remote {
        endpoint: String,
        status: u16,
        body: String,
    },

    /// The response parsed but violates the protocol invariants.
    #[error("protocol error from {endpoint}: {detail}")]
    Protocol { endpoint: String, detail: String },

    #[error("invalid client configuration: {0}")]
    Config(String),
}
