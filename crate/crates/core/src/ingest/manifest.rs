//! Identity manifests: the JSONL file that maps image ids to identities,
//! variants, and embedding locations.
//!
//! Canonical form is JSONL, one record per line with keys exactly
//! `image_id, identity_id, variant, file, row`. A CSV import path with the
//! same columns converts spreadsheets into the canonical form.
//!
//! Validation is total: duplicate `(image_id, variant)` pairs, unknown
//! variant tokens, dangling `(file, row)` references, and cross-file
//! dimension disagreements all produce diagnostics naming the file and line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::Variant;
use crate::ingest::emb1::probe_embeddings;

/// One manifest line: where one image's embedding for one variant lives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_id: String,
    pub identity_id: String,
    pub variant: Variant,
    /// Embedding file path, relative to the manifest's directory.
    pub file: String,
    /// Row within that embedding file.
    pub row: usize,
}

/// A validated set of manifest records.
#[derive(Clone, Debug, Default)]
pub struct IdentityManifest {
    records: Vec<ManifestRecord>,
    by_key: HashMap<(String, Variant), usize>,
}

impl IdentityManifest {
    /// Builds a manifest from records, enforcing `(image_id, variant)`
    /// uniqueness. File references are not resolved here; `read_manifest`
    /// does that against the filesystem.
    pub fn from_records(records: Vec<ManifestRecord>) -> Result<IdentityManifest> {
        let mut by_key = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_key
                .insert((r.image_id.clone(), r.variant), i)
                .is_some()
            {
                return Err(Error::InvalidArgument(format!(
                    "duplicate (image_id, variant) pair ({:?}, {})",
                    r.image_id, r.variant
                )));
            }
        }
        Ok(IdentityManifest { records, by_key })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, image_id: &str, variant: Variant) -> Option<&ManifestRecord> {
        let idx = *self.by_key.get(&(image_id.to_string(), variant))?;
        Some(&self.records[idx])
    }

    /// Identity label of an image's given variant.
    pub fn identity_of(&self, image_id: &str, variant: Variant) -> Option<&str> {
        self.record(image_id, variant).map(|r| r.identity_id.as_str())
    }

    /// Original-variant image ids grouped by identity, both levels sorted.
    pub fn identity_groups(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &self.records {
            if r.variant == Variant::Original {
                groups
                    .entry(r.identity_id.as_str())
                    .or_default()
                    .push(r.image_id.as_str());
            }
        }
        for ids in groups.values_mut() {
            ids.sort_unstable();
        }
        groups
    }

    /// Sorted original-variant image ids.
    pub fn original_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .records
            .iter()
            .filter(|r| r.variant == Variant::Original)
            .map(|r| r.image_id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Distinct non-original variants present, sorted.
    pub fn perturbed_variants(&self) -> Vec<Variant> {
        let mut set: Vec<Variant> = self
            .records
            .iter()
            .map(|r| r.variant)
            .filter(|v| *v != Variant::Original)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort_unstable();
        set
    }
}

/// Reads a manifest from JSONL and validates it fully: per-line parse errors
/// carry the line number, and every `(file, row)` reference is checked
/// against the referenced embedding file's header.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<IdentityManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut seen: HashSet<(String, Variant)> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            return Err(Error::format(path, format!("line {lineno}: blank line")));
        }
        let record: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {lineno}: {e}")))?;
        if !seen.insert((record.image_id.clone(), record.variant)) {
            return Err(Error::data(
                path,
                format!(
                    "line {lineno}: duplicate (image_id, variant) pair ({:?}, {})",
                    record.image_id, record.variant
                ),
            ));
        }
        records.push(record);
    }

    validate_references(path, &records)?;
    IdentityManifest::from_records(records)
}

/// Checks that every `(file, row)` lands inside its embedding file and that
/// all referenced files agree on dimension.
fn validate_references(manifest_path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut file_info: HashMap<&str, (usize, u64)> = HashMap::new();
    let mut shared_dim: Option<(usize, &str)> = None;
    for (i, r) in records.iter().enumerate() {
        let lineno = i + 1;
        let (dim, count) = match file_info.get(r.file.as_str()) {
            Some(&info) => info,
            None => {
                let info = probe_embeddings(base.join(&r.file))?;
                file_info.insert(&r.file, info);
                info
            }
        };
        match shared_dim {
            None => shared_dim = Some((dim, &r.file)),
            Some((expect, first)) if expect != dim => {
                return Err(Error::data(
                    manifest_path,
                    format!(
                        "line {lineno}: file {:?} has dim {dim}, but {first:?} has dim {expect}",
                        r.file
                    ),
                ));
            }
            _ => {}
        }
        if (r.row as u64) >= count {
            return Err(Error::data(
                manifest_path,
                format!(
                    "line {lineno}: row {} out of range for file {:?} (count {count})",
                    r.row, r.file
                ),
            ));
        }
    }
    Ok(())
}

/// Writes a manifest as canonical JSONL (atomic: temp file + rename).
pub fn write_manifest(path: impl AsRef<Path>, manifest: &IdentityManifest) -> Result<()> {
    let path = path.as_ref();
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match parent {
        Some(dir) => tempfile::NamedTempFile::new_in(dir),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(|e| Error::io(path, e))?;
    {
        let out = tmp.as_file_mut();
        for r in manifest.records() {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
            out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Imports a CSV file with header `image_id,identity_id,variant,file,row`
/// into manifest records. File references are not resolved here.
pub fn manifest_from_csv(path: impl AsRef<Path>) -> Result<IdentityManifest> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::format(path, e.to_string()),
        _ => Error::format(path, e.to_string()),
    })?;
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRecord>().enumerate() {
        let record =
            row.map_err(|e| Error::format(path, format!("record {}: {e}", i + 1)))?;
        records.push(record);
    }
    IdentityManifest::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::emb1::write_embeddings;
    use crate::vector::Embedding;

    fn emb(values: &[f32]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    fn write_vectors(dir: &Path, name: &str, n: usize, dim: usize) {
        let vectors: Vec<Embedding> = (0..n)
            .map(|i| emb(&vec![i as f32; dim]))
            .collect();
        write_embeddings(dir.join(name), &vectors).unwrap();
    }

    #[test]
    fn two_valid_lines_parse() {
        let dir = tempfile::tempdir().unwrap();
        write_vectors(dir.path(), "e.emb1", 2, 3);
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"image_id":"img1","identity_id":"p1","variant":"original","file":"e.emb1","row":0}"#,
                "\n",
                r#"{"image_id":"img2","identity_id":"p1","variant":"original","file":"e.emb1","row":1}"#,
                "\n"
            ),
        )
        .unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.identity_of("img1", Variant::Original), Some("p1"));
    }

    #[test]
    fn unknown_variant_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            r#"{"image_id":"img1","identity_id":"p1","variant":"cloaked","file":"e.emb1","row":0}"#,
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn duplicate_pair_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        write_vectors(dir.path(), "e.emb1", 2, 3);
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"image_id":"img1","identity_id":"p1","variant":"original","file":"e.emb1","row":0}"#,
                "\n",
                r#"{"image_id":"img1","identity_id":"p1","variant":"original","file":"e.emb1","row":1}"#,
                "\n"
            ),
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Data { .. }), "{err}");
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn dangling_row_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        write_vectors(dir.path(), "e.emb1", 2, 3);
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            r#"{"image_id":"img1","identity_id":"p1","variant":"original","file":"e.emb1","row":7}"#,
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Data { .. }), "{err}");
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn mixed_file_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_vectors(dir.path(), "a.emb1", 1, 3);
        write_vectors(dir.path(), "b.emb1", 1, 4);
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"image_id":"img1","identity_id":"p1","variant":"original","file":"a.emb1","row":0}"#,
                "\n",
                r#"{"image_id":"img2","identity_id":"p1","variant":"original","file":"b.emb1","row":0}"#,
                "\n"
            ),
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("dim"), "{err}");
    }

    #[test]
    fn jsonl_round_trip_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        write_vectors(dir.path(), "e.emb1", 2, 3);
        let path = dir.path().join("m.jsonl");
        let manifest = IdentityManifest::from_records(vec![
            ManifestRecord {
                image_id: "img1".into(),
                identity_id: "p1".into(),
                variant: Variant::Original,
                file: "e.emb1".into(),
                row: 0,
            },
            ManifestRecord {
                image_id: "img1".into(),
                identity_id: "p1".into(),
                variant: Variant::Fawkes,
                file: "e.emb1".into(),
                row: 1,
            },
        ])
        .unwrap();
        write_manifest(&path, &manifest).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.records(), manifest.records());
        write_manifest(&path, &back).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn csv_import_matches_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("m.csv");
        std::fs::write(
            &csv_path,
            "image_id,identity_id,variant,file,row\nimg1,p1,original,e.emb1,0\nimg2,p2,lowkey,e.emb1,1\n",
        )
        .unwrap();
        let m = manifest_from_csv(&csv_path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records()[1].variant, Variant::Lowkey);
        assert_eq!(m.records()[1].row, 1);
    }

    #[test]
    fn csv_bad_variant_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("m.csv");
        std::fs::write(
            &csv_path,
            "image_id,identity_id,variant,file,row\nimg1,p1,masked,e.emb1,0\n",
        )
        .unwrap();
        assert!(matches!(
            manifest_from_csv(&csv_path),
            Err(Error::Format { .. })
        ));
    }
}
