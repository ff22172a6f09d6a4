//! Per-image max-distance thresholds from same-identity distance
//! distributions.
//!
//! For each image, the distances to every other image of the same identity
//! (original variants, squared L2) form a distribution; a configurable
//! percentile of it (95 by default) becomes that image's threshold.
//! Retrieval results farther than the threshold are later discarded as
//! not-same-identity.
//!
//! Percentile method: linear interpolation between closest ranks at position
//! `(n−1)·p/100` over the ascending-sorted sample. Deterministic and
//! permutation-invariant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::Variant;
use crate::ingest::IdentityManifest;
use crate::vector::{squared_l2, Embedding};

pub const DEFAULT_PERCENTILE: f64 = 95.0;

/// One calibrated row: threshold in squared-distance units plus the sample
/// count it was estimated from (same-identity image count minus one).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub threshold: f64,
    pub n_samples: usize,
}

/// Map of item id to max-distance threshold, with calibration metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTable {
    pub metric: String,
    pub percentile: f64,
    rows: BTreeMap<String, ThresholdEntry>,
}

#[derive(Serialize, Deserialize)]
struct ThresholdRowWire {
    item_id: String,
    threshold: f64,
    n_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct ThresholdTableWire {
    metric: String,
    percentile: f64,
    rows: Vec<ThresholdRowWire>,
}

impl ThresholdTable {
    pub fn new(percentile: f64) -> ThresholdTable {
        ThresholdTable {
            metric: "squared_l2".to_string(),
            percentile,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, item_id: String, entry: ThresholdEntry) {
        self.rows.insert(item_id, entry);
    }

    pub fn get(&self, item_id: &str) -> Option<&ThresholdEntry> {
        self.rows.get(item_id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in ascending item_id order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, &ThresholdEntry)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Serializes as `{metric, percentile, rows: [...]}` with rows sorted by
    /// item_id.
    pub fn to_json(&self) -> serde_json::Value {
        let wire = ThresholdTableWire {
            metric: self.metric.clone(),
            percentile: self.percentile,
            rows: self
                .rows
                .iter()
                .map(|(id, e)| ThresholdRowWire {
                    item_id: id.clone(),
                    threshold: e.threshold,
                    n_samples: e.n_samples,
                })
                .collect(),
        };
        serde_json::to_value(wire).expect("threshold table serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<ThresholdTable> {
        let wire: ThresholdTableWire = serde_json::from_value(value)
            .map_err(|e| Error::InvalidArgument(format!("threshold table: {e}")))?;
        if wire.metric != "squared_l2" {
            return Err(Error::InvalidArgument(format!(
                "threshold table metric {:?} is not \"squared_l2\"",
                wire.metric
            )));
        }
        let mut table = ThresholdTable::new(wire.percentile);
        for row in wire.rows {
            if row.threshold < 0.0 || !row.threshold.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "threshold table: bad threshold {} for {:?}",
                    row.threshold, row.item_id
                )));
            }
            if table
                .rows
                .insert(row.item_id.clone(), ThresholdEntry {
                    threshold: row.threshold,
                    n_samples: row.n_samples,
                })
                .is_some()
            {
                return Err(Error::InvalidArgument(format!(
                    "threshold table: duplicate item {:?}",
                    row.item_id
                )));
            }
        }
        Ok(table)
    }
}

/// Result of a batch calibration: the table plus items that were skipped
/// because their identity has no second image to compare against.
#[derive(Debug)]
pub struct Calibration {
    pub table: ThresholdTable,
    pub skipped: Vec<String>,
}

/// Squared distances from `item_id` to every other original-variant image of
/// the same identity, ordered by ascending counterpart item id.
pub fn same_identity_distances(
    manifest: &IdentityManifest,
    vectors: &BTreeMap<String, Embedding>,
    item_id: &str,
) -> Result<Vec<f64>> {
    let identity = manifest
        .identity_of(item_id, Variant::Original)
        .ok_or_else(|| Error::NotFound(format!("item {item_id:?} has no original record")))?;
    let query = vectors
        .get(item_id)
        .ok_or_else(|| Error::NotFound(format!("no vector for item {item_id:?}")))?;

    let groups = manifest.identity_groups();
    let members = groups
        .get(identity)
        .ok_or_else(|| Error::NotFound(format!("identity {identity:?} has no members")))?;

    let mut distances = Vec::with_capacity(members.len().saturating_sub(1));
    for &other in members {
        if other == item_id {
            continue;
        }
        let v = vectors
            .get(other)
            .ok_or_else(|| Error::NotFound(format!("no vector for item {other:?}")))?;
        distances.push(squared_l2(query, v)?);
    }
    if distances.is_empty() {
        return Err(Error::EmptyDistribution {
            item_id: item_id.to_string(),
            identity: identity.to_string(),
        });
    }
    Ok(distances)
}

/// Linear-interpolation percentile at position `(n−1)·p/100` of the
/// ascending-sorted values. `p` must lie in [0, 100]; endpoints are exact.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "percentile of an empty list".into(),
        ));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    if n == 1 {
        return Ok(sorted[0]);
    }
    let pos = (n - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 || lo + 1 >= n {
        return Ok(sorted[lo.min(n - 1)]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// Calibrates every item in `items`. Items whose identity has fewer than two
/// images cannot be calibrated; they are skipped and reported, not an error.
pub fn calibrate(
    manifest: &IdentityManifest,
    vectors: &BTreeMap<String, Embedding>,
    items: &[String],
    p: f64,
) -> Result<Calibration> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty items list".into()));
    }
    let mut table = ThresholdTable::new(p);
    let mut skipped = Vec::new();
    for item in items {
        match same_identity_distances(manifest, vectors, item) {
            Ok(distances) => {
                let threshold = percentile(&distances, p)?;
                table.insert(
                    item.clone(),
                    ThresholdEntry {
                        threshold,
                        n_samples: distances.len(),
                    },
                );
            }
            Err(Error::EmptyDistribution { .. }) => skipped.push(item.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok(Calibration { table, skipped })
}
