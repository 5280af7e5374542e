//! Manifest and per-sample record loading.
//!
//! A manifest is a JSON object naming an embedding dimension and a list of
//! datasets; each dataset points at a JSON Lines file holding one
//! [`SampleRecord`] per line. Sample paths are resolved against the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordErrorKind, Result};
use crate::stats::FieldKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
    Both,
}

impl Role {
    pub fn is_source(self) -> bool {
        matches!(self, Role::Source | Role::Both)
    }

    pub fn is_target(self) -> bool {
        matches!(self, Role::Target | Role::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub role: Role,
    /// Resolved against the manifest directory once loaded.
    pub samples_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub embedding_dim: usize,
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Deserialize)]
struct RawManifest {
    embedding_dim: i64,
    datasets: Vec<DatasetEntry>,
}

impl Manifest {
    /// Parses manifest text, resolving sample paths against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawManifest = serde_json::from_str(text).map_err(|e| Error::MalformedManifest {
            path: base_dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        if raw.embedding_dim < 1 {
            return Err(Error::NonPositiveDim(raw.embedding_dim));
        }
        let mut seen = HashSet::new();
        let mut datasets = Vec::with_capacity(raw.datasets.len());
        for mut entry in raw.datasets {
            if entry.id.is_empty() {
                return Err(Error::MalformedManifest {
                    path: base_dir.to_path_buf(),
                    reason: "dataset id must be non-empty".into(),
                });
            }
            if !seen.insert(entry.id.clone()) {
                return Err(Error::DuplicateDatasetId(entry.id));
            }
            entry.samples_path = base_dir.join(&entry.samples_path);
            datasets.push(entry);
        }
        Ok(Manifest {
            embedding_dim: raw.embedding_dim as usize,
            datasets,
        })
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.id == id)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Manifest::from_json_str(&text, base).map_err(|e| match e {
        Error::MalformedManifest { reason, .. } => Error::MalformedManifest {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

/// One QA example: three field embeddings plus the answer-token
/// log-probabilities under the frozen base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub q_emb: Vec<f64>,
    pub a_emb: Vec<f64>,
    pub i_emb: Vec<f64>,
    pub ans_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
    /// Generator tag for synthetic pools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer: Option<String>,
}

impl SampleRecord {
    pub fn field(&self, kind: FieldKind) -> &[f64] {
        match kind {
            FieldKind::Question => &self.q_emb,
            FieldKind::Answer => &self.a_emb,
            FieldKind::Image => &self.i_emb,
        }
    }

    /// Checks every record invariant against `dim`.
    pub fn validate(&self, dim: usize) -> Result<(), RecordErrorKind> {
        if self.id.is_empty() {
            return Err(RecordErrorKind::EmptyId);
        }
        for kind in FieldKind::ALL {
            let v = self.field(kind);
            if v.len() != dim {
                return Err(RecordErrorKind::DimensionMismatch {
                    field: kind,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(RecordErrorKind::NonFinite(kind.json_name()));
            }
            let sq: f64 = v.iter().map(|x| x * x).sum();
            if sq.is_nan() || sq <= 0.0 || sq.is_infinite() {
                return Err(RecordErrorKind::ZeroNormEmbedding { field: kind });
            }
        }
        if self.ans_logprobs.is_empty() {
            return Err(RecordErrorKind::EmptyLogprobs);
        }
        for &lp in &self.ans_logprobs {
            if !lp.is_finite() {
                return Err(RecordErrorKind::NonFinite("ans_logprobs"));
            }
            if lp > 0.0 {
                return Err(RecordErrorKind::PositiveLogprob(lp));
            }
        }
        Ok(())
    }
}

/// Parses and validates a single JSON Lines record.
pub fn parse_record_line(line: &str, dim: usize) -> Result<SampleRecord, RecordErrorKind> {
    let record: SampleRecord = serde_json::from_str(line).map_err(|e| RecordErrorKind::Malformed(e.to_string()))?;
    record.validate(dim)?;
    Ok(record)
}

/// Parses a whole JSON Lines document. Blank lines are skipped; line numbers
/// in errors are 1-based positions in `text`.
pub fn parse_records(text: &str, dim: usize) -> std::result::Result<Vec<SampleRecord>, (usize, RecordErrorKind)> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record_line(line, dim).map_err(|k| (idx + 1, k))?;
        if !ids.insert(record.id.clone()) {
            return Err((idx + 1, RecordErrorKind::DuplicateId(record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

/// An immutable, validated collection of records from one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dataset_id: String,
    embedding_dim: usize,
    records: Vec<SampleRecord>,
}

impl SampleSet {
    pub fn new(dataset_id: impl Into<String>, embedding_dim: usize, records: Vec<SampleRecord>) -> Result<Self> {
        let dataset_id = dataset_id.into();
        if embedding_dim == 0 {
            return Err(Error::NonPositiveDim(0));
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset(dataset_id));
        }
        let mut ids = HashSet::new();
        for (idx, r) in records.iter().enumerate() {
            let fail = |kind| Error::InvalidRecord {
                path: PathBuf::from(&dataset_id),
                line: idx + 1,
                kind,
            };
            r.validate(embedding_dim).map_err(fail)?;
            if !ids.insert(r.id.as_str()) {
                return Err(fail(RecordErrorKind::DuplicateId(r.id.clone())));
            }
        }
        Ok(SampleSet {
            dataset_id,
            embedding_dim,
            records,
        })
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<SampleRecord> {
        self.records
    }
}

/// Loads a dataset's JSON Lines file. Records keep file order.
pub fn load_samples(entry: &DatasetEntry, dim: usize) -> Result<SampleSet> {
    load_sample_file(&entry.id, &entry.samples_path, dim)
}

pub fn load_sample_file(dataset_id: &str, path: &Path, dim: usize) -> Result<SampleSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(&text, dim).map_err(|(line, kind)| Error::InvalidRecord {
        path: path.to_path_buf(),
        line,
        kind,
    })?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(dataset_id.to_string()));
    }
    Ok(SampleSet {
        dataset_id: dataset_id.to_string(),
        embedding_dim: dim,
        records,
    })
}

/// Loads every dataset in the manifest, in manifest order.
pub fn load_all(manifest: &Manifest) -> Result<Vec<SampleSet>> {
    manifest
        .datasets
        .par_iter()
        .map(|entry| load_samples(entry, manifest.embedding_dim))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub id: String,
    pub records: usize,
    pub min_answer_len: usize,
    pub max_answer_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub dataset_id: String,
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub embedding_dim: usize,
    pub datasets: Vec<DatasetReport>,
    pub errors: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Loads every dataset and collects failures instead of stopping at the
/// first one.
pub fn validate_manifest(manifest: &Manifest) -> ValidationReport {
    let outcomes: Vec<_> = manifest
        .datasets
        .par_iter()
        .map(|entry| (entry, load_samples(entry, manifest.embedding_dim)))
        .collect();
    let mut datasets = Vec::new();
    let mut errors = Vec::new();
    for (entry, outcome) in outcomes {
        match outcome {
            Ok(set) => {
                let lens = set.records().iter().map(|r| r.ans_logprobs.len());
                datasets.push(DatasetReport {
                    id: entry.id.clone(),
                    records: set.len(),
                    min_answer_len: lens.clone().min().unwrap_or(0),
                    max_answer_len: lens.max().unwrap_or(0),
                });
            }
            Err(e) => errors.push(ValidationIssue {
                dataset_id: entry.id.clone(),
                code: e.code().to_string(),
                line: e.line(),
                message: e.to_string(),
            }),
        }
    }
    ValidationReport {
        embedding_dim: manifest.embedding_dim,
        datasets,
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, q: &[f64], lp: &[f64]) -> String {
        serde_json::json!({
            "id": id, "q_emb": q, "a_emb": q, "i_emb": q, "ans_logprobs": lp,
        })
        .to_string()
    }

    #[test]
    fn parses_manifest_with_two_datasets() {
        let text = r#"{"embedding_dim": 8, "datasets": [
            {"id": "ocr", "role": "source", "samples_path": "ocr.jsonl", "split": "train"},
            {"id": "chart", "role": "both", "samples_path": "sub/chart.jsonl", "split": "test"}]}"#;
        let m = Manifest::from_json_str(text, Path::new("/data")).unwrap();
        assert_eq!(m.embedding_dim, 8);
        assert_eq!(m.datasets.len(), 2);
        assert_eq!(m.datasets[1].samples_path, Path::new("/data/sub/chart.jsonl"));
        assert!(m.datasets[1].role.is_source() && m.datasets[1].role.is_target());
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_dim() {
        let dup = r#"{"embedding_dim": 8, "datasets": [
            {"id": "ocr", "role": "source", "samples_path": "a", "split": "train"},
            {"id": "ocr", "role": "target", "samples_path": "b", "split": "test"}]}"#;
        assert!(matches!(
            Manifest::from_json_str(dup, Path::new(".")),
            Err(Error::DuplicateDatasetId(id)) if id == "ocr"
        ));
        let zero = r#"{"embedding_dim": 0, "datasets": []}"#;
        assert!(matches!(
            Manifest::from_json_str(zero, Path::new(".")),
            Err(Error::NonPositiveDim(0))
        ));
        let missing = r#"{"datasets": []}"#;
        assert!(matches!(
            Manifest::from_json_str(missing, Path::new(".")),
            Err(Error::MalformedManifest { .. })
        ));
    }

    #[test]
    fn record_errors() {
        let short = line("x", &[1.0; 7], &[-0.5]);
        assert!(matches!(
            parse_record_line(&short, 8),
            Err(RecordErrorKind::DimensionMismatch {
                expected: 8,
                found: 7,
                ..
            })
        ));
        let pos = line("x", &[1.0; 8], &[0.1]);
        assert_eq!(parse_record_line(&pos, 8), Err(RecordErrorKind::PositiveLogprob(0.1)));
        let empty = line("x", &[1.0; 8], &[]);
        assert_eq!(parse_record_line(&empty, 8), Err(RecordErrorKind::EmptyLogprobs));
        let zero = line("x", &[0.0; 8], &[-1.0]);
        assert!(matches!(
            parse_record_line(&zero, 8),
            Err(RecordErrorKind::ZeroNormEmbedding {
                field: FieldKind::Question
            })
        ));
    }

    #[test]
    fn reports_line_numbers() {
        let text = [
            line("a", &[1.0; 8], &[-0.5]),
            String::new(),
            line("b", &[1.0; 7], &[-0.5]),
        ]
        .join("\n");
        let (n, kind) = parse_records(&text, 8).unwrap_err();
        assert_eq!(n, 3);
        assert_eq!(kind.code(), "DimensionMismatch");

        let dup = [line("a", &[1.0; 8], &[-0.5]), line("a", &[1.0; 8], &[-0.5])].join("\n");
        assert_eq!(
            parse_records(&dup, 8),
            Err((2, RecordErrorKind::DuplicateId("a".into())))
        );
    }

    #[test]
    fn loads_three_records_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let body: Vec<_> = ["c", "a", "b"]
            .iter()
            .map(|id| line(id, &[1.0; 8], &[-0.1, -0.2]))
            .collect();
        fs::write(dir.path().join("s.jsonl"), body.join("\n") + "\n").unwrap();
        let entry = DatasetEntry {
            id: "s".into(),
            role: Role::Source,
            samples_path: dir.path().join("s.jsonl"),
            split: Split::Train,
        };
        let set = load_samples(&entry, 8).unwrap();
        let ids: Vec<_> = set.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(set, load_samples(&entry, 8).unwrap());
    }

    #[test]
    fn validation_collects_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("ok.jsonl"), line("a", &[1.0, 2.0], &[-1.0, -2.0, -3.0])).unwrap();
        fs::write(dir.path().join("empty.jsonl"), "\n").unwrap();
        let manifest = r#"{"embedding_dim": 2, "datasets": [
            {"id": "ok", "role": "source", "samples_path": "ok.jsonl", "split": "train"},
            {"id": "gone", "role": "source", "samples_path": "missing.jsonl", "split": "train"},
            {"id": "empty", "role": "target", "samples_path": "empty.jsonl", "split": "test"}]}"#;
        fs::write(dir.path().join("m.json"), manifest).unwrap();
        let m = load_manifest(&dir.path().join("m.json")).unwrap();
        let report = validate_manifest(&m);
        assert_eq!(report.datasets.len(), 1);
        assert_eq!(report.datasets[0].min_answer_len, 3);
        let codes: Vec<_> = report.errors.iter().map(|e| e.code.as_str()).collect();
        assert_eq!(codes, ["FileNotFound", "EmptyDataset"]);
        assert!(!report.is_ok());
    }
}
