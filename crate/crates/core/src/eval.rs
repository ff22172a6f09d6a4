//! Top-1 / top-5 identification accuracy over an identity-labeled index.
//!
//! Every original-variant image is used as a query against an index built
//! over the original variants. The query's own entry is excluded by item id,
//! the next `k−1` hits are scored, and a query counts as a top-1 (top-5) hit
//! when the first (any) scored hit shares the query's identity.
//!
//! Singleton identities have no possible same-identity hit; by default they
//! stay in the denominator as guaranteed misses. `min_identity_size` can
//! exclude them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{FlatIndex, SearchHit, Variant};
use crate::ingest::IdentityManifest;
use crate::vector::Embedding;

#[derive(Clone, Copy, Debug)]
pub struct EvalConfig {
    /// Hits retrieved per query including the query's own entry. The scored
    /// list is one shorter. Default 6 retrieved / 5 scored.
    pub retrieve_k: usize,
    /// Identities smaller than this are excluded from the query set.
    /// Default 1 (include everything, singletons count as misses).
    pub min_identity_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            retrieve_k: 6,
            min_identity_size: 1,
        }
    }
}

/// Per-query classification outcome.
#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub item_id: String,
    pub top1_hit: bool,
    pub top5_hit: bool,
    /// Scored hits after self-exclusion, at most `retrieve_k − 1`.
    pub retrieved: Vec<SearchHit>,
}

/// Aggregated identification accuracy for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub label: String,
    pub n_queries: usize,
    pub top1_hits: usize,
    pub top5_hits: usize,
    /// Exact rational top1_hits / n_queries.
    pub top1_accuracy: f64,
    pub top5_accuracy: f64,
}

impl AccuracyReport {
    pub fn top1_pct(&self) -> f64 {
        (self.top1_accuracy * 10_000.0).round() / 100.0
    }

    pub fn top5_pct(&self) -> f64 {
        (self.top5_accuracy * 10_000.0).round() / 100.0
    }
}

fn query_embedding(index: &FlatIndex, item_id: &str) -> Result<Embedding> {
    let values = index
        .vector(item_id)
        .ok_or_else(|| Error::NotFound(format!("item {item_id:?} not in index")))?;
    Embedding::new(values.to_vec())
}

/// Classifies a single query image.
pub fn classify_query(
    index: &FlatIndex,
    manifest: &IdentityManifest,
    item_id: &str,
    config: &EvalConfig,
) -> Result<QueryOutcome> {
    if config.retrieve_k < 2 {
        return Err(Error::InvalidArgument(
            "retrieve_k must be at least 2 (one hit is the query itself)".into(),
        ));
    }
    let identity = manifest
        .identity_of(item_id, Variant::Original)
        .ok_or_else(|| Error::NotFound(format!("item {item_id:?} not in manifest")))?;
    let query = query_embedding(index, item_id)?;
    let scored_k = config.retrieve_k - 1;
    let retrieved = index.search_excluding(&query, scored_k, item_id)?;

    let shares_identity = |hit: &SearchHit| {
        manifest.identity_of(&hit.item_id, Variant::Original) == Some(identity)
    };
    let top1_hit = retrieved.first().map(shares_identity).unwrap_or(false);
    let top5_hit = retrieved.iter().any(shares_identity);

    Ok(QueryOutcome {
        item_id: item_id.to_string(),
        top1_hit,
        top5_hit,
        retrieved,
    })
}

/// Runs [`classify_query`] over every eligible indexed item and aggregates.
pub fn evaluate_accuracy(
    index: &FlatIndex,
    manifest: &IdentityManifest,
    label: &str,
    config: &EvalConfig,
) -> Result<AccuracyReport> {
    if index.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate accuracy over an empty index".into(),
        ));
    }
    for id in index.item_ids() {
        if index.variant_of(id) != Some(Variant::Original) {
            return Err(Error::InvalidArgument(format!(
                "index entry {id:?} is not an original variant"
            )));
        }
        if manifest.identity_of(id, Variant::Original).is_none() {
            return Err(Error::InvalidArgument(format!(
                "indexed item {id:?} missing from manifest"
            )));
        }
    }

    let groups = manifest.identity_groups();
    let mut queries: Vec<&str> = index.item_ids().collect();
    queries.sort_unstable();
    if config.min_identity_size > 1 {
        queries.retain(|id| {
            let identity = manifest
                .identity_of(id, Variant::Original)
                .expect("checked above");
            groups
                .get(identity)
                .map(|members| members.len() >= config.min_identity_size)
                .unwrap_or(false)
        });
    }
    if queries.is_empty() {
        return Err(Error::InvalidArgument(
            "no eligible queries after identity-size filtering".into(),
        ));
    }

    let mut top1_hits = 0usize;
    let mut top5_hits = 0usize;
    for id in &queries {
        let outcome = classify_query(index, manifest, id, config)?;
        top1_hits += outcome.top1_hit as usize;
        top5_hits += outcome.top5_hit as usize;
    }
    let n_queries = queries.len();
    Ok(AccuracyReport {
        label: label.to_string(),
        n_queries,
        top1_hits,
        top5_hits,
        top1_accuracy: top1_hits as f64 / n_queries as f64,
        top5_accuracy: top5_hits as f64 / n_queries as f64,
    })
}
