//! KNN-search HTTP service and client over a flat embedding index.
//!
//! The wire protocol mirrors the public knn-service request surface: a JSON
//! POST carrying an embedding plus retrieval knobs (deduplication, safety /
//! violence / aesthetic filters). Filter semantics beyond deduplication are
//! deployment-specific, so they bind to pluggable hooks with pass-through
//! defaults.

pub mod client;
pub mod error;
pub mod hooks;
pub mod protocol;
pub mod server;

pub use client::{query_remote, KnnClient, DEFAULT_TIMEOUT};
pub use error::{ClientError, ServiceError};
pub use protocol::{ErrorBody, KnnRequest, KnnResponse, KnnResult, Modality};
pub use server::{
    deduplicate, router, run_blocking, serve_query, start, ServedIndex, ServerHandle,
    ServiceConfig, DEFAULT_DEDUP_EPSILON, DEFAULT_OVERFETCH_FACTOR,
};
