//! Exact embedding-similarity search with an identity-retrieval evaluation
//! harness.
//!
//! The pieces, bottom up:
//!
//! - [`vector`]: embedding type and squared-L2 / L2 distance kernels
//!   (f32 storage, f64 accumulation, fixed reduction order).
//! - [`index`]: immutable brute-force flat index with deterministic
//!   tie-breaking, batch scanning, and optional query parallelism.
//! - [`eval`]: top-1 / top-5 identification accuracy with self-exclusion.
//! - [`calibrate`]: per-image max-distance thresholds from same-identity
//!   distance distributions (interpolated percentile).
//! - [`robustness`]: threshold filtering, qualification, and per-variant
//!   valid-result aggregation over original vs. perturbed queries.
//! - [`ingest`]: the EMB1 binary vector format, JSONL identity manifests,
//!   CSV import, and dataset loading.
//! - [`synth`]: seeded synthetic clustered datasets with perturbed
//!   variants, for exercising the whole pipeline without real data.
//! - [`report`]: JSON/CSV/text serialization of the evaluation reports.
//!
//! An index is fully reconstructible from an EMB1 file plus its manifest;
//! there is no separate binary index format.

pub mod calibrate;
pub mod error;
pub mod eval;
pub mod index;
pub mod ingest;
mod kernel;
pub mod report;
pub mod robustness;
pub mod synth;
pub mod vector;

pub use error::{Error, Result};
pub use index::{FlatIndex, IndexEntry, SearchHit, Variant};
pub use vector::{l2, normalize, squared_l2, Embedding};
