//! Report serialization: JSON (canonical), CSV, and human-readable text.

use crate::calibrate::ThresholdTable;
use crate::error::{Error, Result};
use crate::eval::AccuracyReport;
use crate::robustness::RobustnessReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

/// Any report the pipeline can emit.
#[derive(Debug)]
pub enum Report {
    Accuracy(AccuracyReport),
    Robustness(RobustnessReport),
    Thresholds(ThresholdTable),
}

/// Serializes a report. JSON output is canonical: emit, parse, emit again is
/// byte-identical. Degenerate reports (zero queries, zero qualifying images)
/// are refused rather than emitting undefined fractions.
pub fn emit_report(report: &Report, format: ReportFormat) -> Result<Vec<u8>> {
    match report {
        Report::Accuracy(r) => {
            if r.n_queries == 0 {
                return Err(Error::InvalidArgument(
                    "accuracy report with zero queries".into(),
                ));
            }
            match format {
                ReportFormat::Json => to_canonical_json(&serde_json::to_value(r).unwrap()),
                ReportFormat::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record([
                        "label",
                        "n_queries",
                        "top1_hits",
                        "top5_hits",
                        "top1_accuracy_pct",
                        "top5_accuracy_pct",
                    ])
                    .map_err(csv_err)?;
                    w.write_record([
                        r.label.clone(),
                        r.n_queries.to_string(),
                        r.top1_hits.to_string(),
                        r.top5_hits.to_string(),
                        format!("{:.2}", r.top1_pct()),
                        format!("{:.2}", r.top5_pct()),
                    ])
                    .map_err(csv_err)?;
                    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
                }
                ReportFormat::Text => {
                    let mut out = String::new();
                    out.push_str(&format!("label: {}\n", r.label));
                    out.push_str(&format!("queries: {}\n", r.n_queries));
                    out.push_str(&format!(
                        "top-1: {} of {} ({:.2}%)\n",
                        r.top1_hits, r.n_queries, r.top1_pct()
                    ));
                    out.push_str(&format!(
                        "top-5: {} of {} ({:.2}%)\n",
                        r.top5_hits, r.n_queries, r.top5_pct()
                    ));
                    Ok(out.into_bytes())
                }
            }
        }
        Report::Robustness(r) => {
            if r.n_qualifying == 0 {
                return Err(Error::InvalidArgument(
                    "robustness report with no qualifying images".into(),
                ));
            }
            match format {
                ReportFormat::Json => to_canonical_json(&serde_json::to_value(r).unwrap()),
                ReportFormat::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record(["scope", "count", "fraction_pct"]).map_err(csv_err)?;
                    w.write_record(["subset", &r.n_subset.to_string(), ""]).map_err(csv_err)?;
                    w.write_record([
                        "qualifying".to_string(),
                        r.n_qualifying.to_string(),
                        String::new(),
                    ])
                    .map_err(csv_err)?;
                    for v in &r.variants {
                        w.write_record([
                            v.variant.clone(),
                            v.n_with_valid.to_string(),
                            format!("{:.2}", v.fraction_pct),
                        ])
                        .map_err(csv_err)?;
                    }
                    w.write_record([
                        "all_variants".to_string(),
                        r.n_both.to_string(),
                        format!("{:.2}", r.fraction_both_pct),
                    ])
                    .map_err(csv_err)?;
                    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
                }
                ReportFormat::Text => {
                    let mut out = String::new();
                    out.push_str(&format!(
                        "Out of {} subset images, {} return {} or more valid results for the original variant.\n",
                        r.n_subset, r.n_qualifying, r.min_valid_for_qualification
                    ));
                    for v in &r.variants {
                        out.push_str(&format!(
                            "Among these {} images, {} ({:.2}%) return one or more valid results for the {} variant.\n",
                            r.n_qualifying, v.n_with_valid, v.fraction_pct, v.variant
                        ));
                    }
                    out.push_str(&format!(
                        "{} ({:.2}%) return one or more valid results for every perturbed variant.\n",
                        r.n_both, r.fraction_both_pct
                    ));
                    Ok(out.into_bytes())
                }
            }
        }
        Report::Thresholds(t) => match format {
            ReportFormat::Json => to_canonical_json(&t.to_json()),
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["item_id", "threshold", "n_samples"]).map_err(csv_err)?;
                for (id, entry) in t.rows() {
                    w.write_record([
                        id.to_string(),
                        format!("{}", entry.threshold),
                        entry.n_samples.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
                w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
            }
            ReportFormat::Text => {
                let mut out = String::new();
                out.push_str(&format!("metric: {}\n", t.metric));
                out.push_str(&format!("percentile: {}\n", t.percentile));
                out.push_str(&format!("rows: {}\n", t.len()));
                for (id, entry) in t.rows() {
                    out.push_str(&format!(
                        "{}\t{}\t{}\n",
                        id, entry.threshold, entry.n_samples
                    ));
                }
                Ok(out.into_bytes())
            }
        },
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn to_canonical_json(value: &serde_json::Value) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("json: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}
