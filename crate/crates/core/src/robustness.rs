//! Valid-result filtering, image qualification, and per-variant robustness
//! aggregation.
//!
//! A retrieval result is *valid* for a query image when its squared distance
//! is at or below the image's calibrated threshold; the identity labels of
//! results are never consulted, the threshold is the sole proxy. An image
//! *qualifies* when its unperturbed query returns at least `min_valid` valid
//! results (3 by default). The report then states, per perturbed variant,
//! how many qualifying images still return one or more valid results.
//!
//! Result sets may come from the local flat index or from recorded service
//! responses; both persist as the same JSONL, so the whole pipeline replays
//! offline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{FlatIndex, SearchHit, Variant};
use crate::ingest::Dataset;

/// Retrieval results for one (image, variant) query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResultSet {
    pub item_id: String,
    pub variant: Variant,
    /// Sorted by (squared_distance ascending, item_id ascending).
    pub hits: Vec<SearchHit>,
}

#[derive(Serialize, Deserialize)]
struct HitWire {
    item_id: String,
    squared_distance: f64,
}

#[derive(Serialize, Deserialize)]
struct ResultSetWire {
    item_id: String,
    variant: Variant,
    hits: Vec<HitWire>,
}

/// Per-variant slice of a robustness report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantStat {
    pub variant: String,
    /// Qualifying images with >= 1 valid result under this variant.
    pub n_with_valid: usize,
    /// round(100 * n_with_valid / n_qualifying, 2 decimals)
    pub fraction_pct: f64,
}

/// Qualification counts and per-variant valid-result fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub n_subset: usize,
    pub min_valid_for_qualification: usize,
    pub n_qualifying: usize,
    pub variants: Vec<VariantStat>,
    /// Qualifying images with >= 1 valid result under every variant.
    pub n_both: usize,
    pub fraction_both_pct: f64,
}

fn round_pct(numer: usize, denom: usize) -> f64 {
    (100.0 * numer as f64 / denom as f64 * 100.0).round() / 100.0
}

/// Keeps hits whose squared distance is at or below `threshold` (the
/// boundary is inclusive: equality stays in). Order is preserved; since hit
/// lists are distance-sorted, the output is a prefix of the input.
pub fn filter_valid(hits: &[SearchHit], threshold: f64) -> Result<Vec<SearchHit>> {
    if threshold < 0.0 || threshold.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    Ok(hits
        .iter()
        .filter(|h| h.squared_distance <= threshold)
        .cloned()
        .collect())
}

/// Item ids whose valid-result count reaches `min_valid` (boundary
/// inclusive).
pub fn qualify(
    valid_counts_original: &BTreeMap<String, usize>,
    min_valid: usize,
) -> BTreeSet<String> {
    valid_counts_original
        .iter()
        .filter(|(_, &count)| count >= min_valid)
        .map(|(id, _)| id.clone())
        .collect()
}

/// Builds the report from a qualifying set and per-variant valid sets. Every
/// valid set must be a subset of `qualifying`; the qualifying set must be
/// non-empty (fractions are undefined otherwise).
pub fn aggregate(
    n_subset: usize,
    qualifying: &BTreeSet<String>,
    min_valid: usize,
    variant_valid: &[(String, BTreeSet<String>)],
) -> Result<RobustnessReport> {
    if qualifying.is_empty() {
        return Err(Error::InvalidArgument(
            "no qualifying images; fractions are undefined".into(),
        ));
    }
    if variant_valid.is_empty() {
        return Err(Error::InvalidArgument(
            "no perturbed variants to aggregate".into(),
        ));
    }
    if qualifying.len() > n_subset {
        return Err(Error::InvalidArgument(format!(
            "qualifying set ({}) larger than subset ({n_subset})",
            qualifying.len()
        )));
    }
    let n_qualifying = qualifying.len();
    let mut variants = Vec::with_capacity(variant_valid.len());
    let mut both: Option<BTreeSet<String>> = None;
    for (name, valid) in variant_valid {
        if let Some(stray) = valid.iter().find(|id| !qualifying.contains(*id)) {
            return Err(Error::InvalidArgument(format!(
                "valid set for {name:?} contains non-qualifying item {stray:?}"
            )));
        }
        variants.push(VariantStat {
            variant: name.clone(),
            n_with_valid: valid.len(),
            fraction_pct: round_pct(valid.len(), n_qualifying),
        });
        both = Some(match both {
            None => valid.clone(),
            Some(acc) => acc.intersection(valid).cloned().collect(),
        });
    }
    let n_both = both.map(|s| s.len()).unwrap_or(0);
    Ok(RobustnessReport {
        n_subset,
        min_valid_for_qualification: min_valid,
        n_qualifying,
        variants,
        n_both,
        fraction_both_pct: round_pct(n_both, n_qualifying),
    })
}

/// Outcome of a full robustness evaluation, with per-item diagnostics.
#[derive(Debug)]
pub struct RobustnessEvaluation {
    pub report: RobustnessReport,
    /// Items with an original result set but no calibrated threshold.
    pub skipped_no_threshold: Vec<String>,
}

/// Runs the whole protocol over recorded result sets: per-item threshold
/// filtering, qualification on the original variant, per-variant valid sets,
/// aggregation.
pub fn evaluate_robustness(
    result_sets: &[QueryResultSet],
    thresholds: &crate::calibrate::ThresholdTable,
    min_valid: usize,
) -> Result<RobustnessEvaluation> {
    let mut by_key: HashMap<(&str, Variant), &QueryResultSet> = HashMap::new();
    for rs in result_sets {
        if by_key
            .insert((rs.item_id.as_str(), rs.variant), rs)
            .is_some()
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate result set for ({:?}, {})",
                rs.item_id, rs.variant
            )));
        }
    }

    // Evaluated subset: items that have an original result set and a
    // threshold. Originals without thresholds are reported, not fatal.
    let mut items: Vec<&str> = Vec::new();
    let mut skipped = Vec::new();
    for rs in result_sets {
        if rs.variant != Variant::Original {
            continue;
        }
        if thresholds.get(&rs.item_id).is_some() {
            items.push(&rs.item_id);
        } else {
            skipped.push(rs.item_id.clone());
        }
    }
    items.sort_unstable();
    if items.is_empty() {
        return Err(Error::InvalidArgument(
            "no original-variant result sets with calibrated thresholds".into(),
        ));
    }

    let mut valid_counts: BTreeMap<String, usize> = BTreeMap::new();
    for &item in &items {
        let t = thresholds.get(item).expect("filtered above").threshold;
        let rs = by_key[&(item, Variant::Original)];
        valid_counts.insert(item.to_string(), filter_valid(&rs.hits, t)?.len());
    }
    let qualifying = qualify(&valid_counts, min_valid);

    let mut variant_names: Vec<Variant> = result_sets
        .iter()
        .map(|rs| rs.variant)
        .filter(|v| *v != Variant::Original)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    variant_names.sort_unstable();

    let mut variant_valid = Vec::with_capacity(variant_names.len());
    for v in variant_names {
        let mut valid = BTreeSet::new();
        for item in &qualifying {
            let t = thresholds.get(item).expect("qualifying implies row").threshold;
            if let Some(rs) = by_key.get(&(item.as_str(), v)) {
                if !filter_valid(&rs.hits, t)?.is_empty() {
                    valid.insert(item.clone());
                }
            }
        }
        variant_valid.push((v.as_str().to_string(), valid));
    }

    let report = aggregate(items.len(), &qualifying, min_valid, &variant_valid)?;
    Ok(RobustnessEvaluation {
        report,
        skipped_no_threshold: skipped,
    })
}

/// Queries the index with every (image, variant) embedding in the dataset,
/// `num_images` hits each, producing replayable result sets. Queries are not
/// self-excluded: validity is decided by thresholds alone.
pub fn collect_result_sets(
    index: &FlatIndex,
    dataset: &Dataset,
    num_images: usize,
) -> Result<Vec<QueryResultSet>> {
    let mut variants = vec![Variant::Original];
    variants.extend(dataset.perturbed_variants());
    let mut out = Vec::new();
    for item in dataset.manifest().original_ids() {
        for &variant in &variants {
            if let Some(embedding) = dataset.embedding(item, variant) {
                let hits = index.search(embedding, num_images)?;
                out.push(QueryResultSet {
                    item_id: item.to_string(),
                    variant,
                    hits,
                });
            }
        }
    }
    Ok(out)
}

/// Writes result sets as JSONL, one object per query.
pub fn write_result_sets(path: impl AsRef<Path>, sets: &[QueryResultSet]) -> Result<()> {
    let path = path.as_ref();
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match parent {
        Some(dir) => tempfile::NamedTempFile::new_in(dir),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(|e| Error::io(path, e))?;
    {
        let out = tmp.as_file_mut();
        for rs in sets {
            let wire = ResultSetWire {
                item_id: rs.item_id.clone(),
                variant: rs.variant,
                hits: rs
                    .hits
                    .iter()
                    .map(|h| HitWire {
                        item_id: h.item_id.clone(),
                        squared_distance: h.squared_distance,
                    })
                    .collect(),
            };
            let line = serde_json::to_string(&wire)
                .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
            out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Appends result sets to a JSONL file, creating it if absent. Used for
/// incremental recording of remote query responses; not atomic.
pub fn append_result_sets(path: impl AsRef<Path>, sets: &[QueryResultSet]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for rs in sets {
        let wire = ResultSetWire {
            item_id: rs.item_id.clone(),
            variant: rs.variant,
            hits: rs
                .hits
                .iter()
                .map(|h| HitWire {
                    item_id: h.item_id.clone(),
                    squared_distance: h.squared_distance,
                })
                .collect(),
        };
        let line = serde_json::to_string(&wire)
            .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
        file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads result sets from JSONL, re-deriving ranks from position and
/// validating sort order.
pub fn read_result_sets(path: impl AsRef<Path>) -> Result<Vec<QueryResultSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            return Err(Error::format(path, format!("line {lineno}: blank line")));
        }
        let wire: ResultSetWire = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {lineno}: {e}")))?;
        for w in wire.hits.windows(2) {
            let ordered = w[0].squared_distance < w[1].squared_distance
                || (w[0].squared_distance == w[1].squared_distance
                    && w[0].item_id < w[1].item_id);
            if !ordered {
                return Err(Error::data(
                    path,
                    format!(
                        "line {lineno}: hits not sorted by (squared_distance, item_id) near {:?}",
                        w[1].item_id
                    ),
                ));
            }
        }
        if wire.hits.iter().any(|h| h.squared_distance < 0.0 || !h.squared_distance.is_finite()) {
            return Err(Error::data(
                path,
                format!("line {lineno}: negative or non-finite squared_distance"),
            ));
        }
        out.push(QueryResultSet {
            item_id: wire.item_id,
            variant: wire.variant,
            hits: wire
                .hits
                .into_iter()
                .enumerate()
                .map(|(rank, h)| SearchHit {
                    item_id: h.item_id,
                    rank,
                    squared_distance: h.squared_distance,
                })
                .collect(),
        });
    }
    Ok(out)
}
