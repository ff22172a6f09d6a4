//! In-memory dataset: a validated manifest plus every referenced embedding.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{IndexEntry, Variant};
use crate::ingest::emb1::read_embeddings;
use crate::ingest::manifest::{read_manifest, IdentityManifest};
use crate::vector::{normalize, Embedding};

/// A manifest joined with its embedding payloads, keyed by
/// `(image_id, variant)`.
pub struct Dataset {
    manifest: IdentityManifest,
    dim: usize,
    vectors: HashMap<(String, Variant), Embedding>,
}

/// Options applied while loading a dataset.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// L2-normalize every embedding at ingest. Off by default; raw vectors
    /// are indexed as stored.
    pub normalize: bool,
}

/// Loads the manifest at `path` and every embedding it references.
pub fn load_dataset(path: impl AsRef<Path>, options: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut files: HashMap<&str, Vec<Embedding>> = HashMap::new();
    for r in manifest.records() {
        if !files.contains_key(r.file.as_str()) {
            let parsed = read_embeddings(base.join(&r.file))?;
            files.insert(r.file.as_str(), parsed.vectors);
        }
    }

    let mut dim = 0;
    let mut vectors = HashMap::with_capacity(manifest.len());
    for r in manifest.records() {
        let vecs = &files[r.file.as_str()];
        // row bounds were validated by read_manifest
        let mut v = vecs[r.row].clone();
        if options.normalize {
            v = normalize(&v).map_err(|e| {
                Error::Data {
                    path: path.display().to_string(),
                    detail: format!(
                        "cannot normalize embedding of ({:?}, {}): {e}",
                        r.image_id, r.variant
                    ),
                }
            })?;
        }
        dim = v.dim();
        vectors.insert((r.image_id.clone(), r.variant), v);
    }

    Ok(Dataset {
        manifest,
        dim,
        vectors,
    })
}

impl Dataset {
    pub fn manifest(&self) -> &IdentityManifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, image_id: &str, variant: Variant) -> Option<&Embedding> {
        self.vectors.get(&(image_id.to_string(), variant))
    }

    /// Index entries for every original-variant image, sorted by image id.
    pub fn original_entries(&self) -> Vec<IndexEntry> {
        let mut recs: Vec<_> = self
            .manifest
            .records()
            .iter()
            .filter(|r| r.variant == Variant::Original)
            .collect();
        recs.sort_unstable_by(|a, b| a.image_id.cmp(&b.image_id));
        recs.into_iter()
            .map(|r| IndexEntry {
                item_id: r.image_id.clone(),
                identity_id: Some(r.identity_id.clone()),
                variant: r.variant,
                vector: self.vectors[&(r.image_id.clone(), r.variant)].clone(),
            })
            .collect()
    }

    /// Original-variant embeddings keyed by image id, ordered by id.
    pub fn original_vectors(&self) -> BTreeMap<String, Embedding> {
        self.manifest
            .records()
            .iter()
            .filter(|r| r.variant == Variant::Original)
            .map(|r| {
                (
                    r.image_id.clone(),
                    self.vectors[&(r.image_id.clone(), r.variant)].clone(),
                )
            })
            .collect()
    }

    pub fn perturbed_variants(&self) -> Vec<Variant> {
        self.manifest.perturbed_variants()
    }
}
