//! File formats and dataset assembly: the EMB1 binary vector format, the
//! identity manifest (JSONL canonical, CSV import), and the in-memory join
//! of the two.

mod dataset;
mod emb1;
mod manifest;

pub use dataset::{load_dataset, Dataset, LoadOptions};
pub use emb1::{probe_embeddings, read_embeddings, write_embeddings, EmbeddingFile};
pub use manifest::{
    manifest_from_csv, read_manifest, write_manifest, IdentityManifest, ManifestRecord,
};
