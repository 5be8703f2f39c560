//! JSON Lines prediction logs.
//!
//! ```text
//! {"labels": ["2", "3", ...], "meta": {"loss": "cer", "model": "lexlm-base"}}   optional header
//! {"id": "case-001", "truth": [0, 1, ...], "samples": [[0.1, 0.8, ...], ...], "det": [0.12, 0.79, ...]}
//! ```
//!
//! `det` is optional. Every record must carry the same number of labels and
//! samples.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use selpred_core::{Dataset, LabelSet, PredictionRecord};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// A parsed log: the dataset plus header metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub meta: BTreeMap<String, String>,
    /// Whether labels came from a header line.
    pub has_header: bool,
}

impl Ingested {
    pub fn meta_or(&self, key: &str, default: &str) -> String {
        self.meta.get(key).cloned().unwrap_or_else(|| default.to_string())
    }
}

fn parse_header(value: &Value) -> Option<std::result::Result<Header, serde_json::Error>> {
    let obj = value.as_object()?;
    if !obj.contains_key("labels") || obj.contains_key("truth") {
        return None;
    }
    let mut obj = obj.clone();
    if let Some(Value::Object(meta)) = obj.get_mut("meta") {
        for v in meta.values_mut() {
            if !v.is_string() {
                *v = Value::String(v.to_string());
            }
        }
    }
    Some(serde_json::from_value(Value::Object(obj)))
}

pub fn ingest(path: &Path) -> Result<Ingested> {
    let file = File::open(path).map_err(CliError::io(path))?;
    ingest_reader(BufReader::new(file), path)
}

pub fn ingest_reader<R: BufRead>(reader: R, path: &Path) -> Result<Ingested> {
    let parse_err = |line: usize, message: String| CliError::Parse { path: path.to_path_buf(), line, message };
    let check_err = |line: usize, message: String| CliError::Check(format!("{}:{line}: {message}", path.display()));

    let mut header: Option<Header> = None;
    let mut records: Vec<PredictionRecord> = Vec::new();
    let mut shape: Option<(usize, usize)> = None;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(CliError::io(path))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if records.is_empty() && header.is_none() {
            let value: Value = serde_json::from_str(text).map_err(|e| parse_err(lineno, e.to_string()))?;
            if let Some(h) = parse_header(&value) {
                let h = h.map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
                LabelSet::new(h.labels.clone()).map_err(|e| check_err(lineno, e.to_string()))?;
                header = Some(h);
                continue;
            }
        }
        let rec: PredictionRecord = serde_json::from_str(text).map_err(|e| parse_err(lineno, e.to_string()))?;

        let n_labels = header.as_ref().map(|h| h.labels.len()).or(shape.map(|s| s.0)).unwrap_or(rec.truth.len());
        let n_samples = shape.map_or(rec.samples.len(), |s| s.1);
        if rec.truth.len() != n_labels {
            return Err(check_err(lineno, format!("truth has {} labels, expected {n_labels}", rec.truth.len())));
        }
        if rec.samples.is_empty() {
            return Err(check_err(lineno, "no probability samples".into()));
        }
        if rec.samples.len() != n_samples {
            return Err(check_err(lineno, format!("{} samples, expected {n_samples}", rec.samples.len())));
        }
        if let Some((n, row)) = rec.samples.iter().enumerate().find(|(_, r)| r.len() != n_labels) {
            return Err(check_err(lineno, format!("samples[{n}] has {} labels, expected {n_labels}", row.len())));
        }
        if let Some(det) = rec.det_probs.as_ref().filter(|d| d.len() != n_labels) {
            return Err(check_err(lineno, format!("det has {} labels, expected {n_labels}", det.len())));
        }
        shape = Some((n_labels, n_samples));
        records.push(rec);
    }

    let has_header = header.is_some();
    let (label_set, meta) = match header {
        Some(h) => (LabelSet::new(h.labels)?, h.meta),
        None => {
            let (l, _) = shape.ok_or_else(|| CliError::Check(format!("{}: no records", path.display())))?;
            (LabelSet::numbered(l)?, BTreeMap::new())
        }
    };
    let dataset = Dataset::from_parts(label_set, records);
    let report = dataset.validate();
    if !report.is_valid() {
        return Err(CliError::Check(format!("{}: invalid dataset\n{report}", path.display())));
    }
    Ok(Ingested { dataset, meta, has_header })
}

/// Writes a dataset in the format [`ingest`] reads, always with a header.
pub fn write_jsonl<W: Write>(mut out: W, dataset: &Dataset, meta: &BTreeMap<String, String>) -> Result<()> {
    let header = Header { labels: dataset.label_set().as_slice().to_vec(), meta: meta.clone() };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(CliError::io("<output>"))?;
    for rec in dataset.records() {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(CliError::io("<output>"))?;
    }
    out.flush().map_err(CliError::io("<output>"))?;
    Ok(())
}

pub fn write_jsonl_file(path: &Path, dataset: &Dataset, meta: &BTreeMap<String, String>) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    write_jsonl(BufWriter::new(file), dataset, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Ingested> {
        ingest_reader(text.as_bytes(), Path::new("test.jsonl"))
    }

    #[test]
    fn two_line_file() {
        let got = parse(concat!(
            "{\"id\":\"a\",\"truth\":[1,0],\"samples\":[[0.9,0.2]]}\n",
            "{\"id\":\"b\",\"truth\":[0,0],\"samples\":[[0.1,0.3]],\"det\":[0.2,0.2]}\n",
        ))
        .unwrap();
        assert_eq!(got.dataset.len(), 2);
        assert!(!got.has_header);
        assert_eq!(got.dataset.label_set().get(1), Some("1"));
    }

    #[test]
    fn header_with_meta() {
        let got = parse(concat!(
            "{\"labels\":[\"x\",\"y\"],\"meta\":{\"loss\":\"cer\",\"seed\":3}}\n",
            "{\"id\":\"a\",\"truth\":[1,0],\"samples\":[[0.9,0.2]]}\n",
        ))
        .unwrap();
        assert_eq!(got.meta_or("loss", "?"), "cer");
        assert_eq!(got.meta_or("seed", "?"), "3");
        assert_eq!(got.dataset.label_set().index_of("y"), Some(1));
    }

    #[test]
    fn wrong_truth_length_cites_line() {
        let err = parse(concat!(
            "{\"labels\":[\"x\",\"y\"]}\n",
            "{\"id\":\"a\",\"truth\":[1,0],\"samples\":[[0.9,0.2]]}\n",
            "{\"id\":\"b\",\"truth\":[1],\"samples\":[[0.9,0.2]]}\n",
        ))
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("test.jsonl:3:"), "{err}");
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let err = parse("{\"id\":\"a\",\"truth\":[1],\"samples\":[[0.9]]}\n{oops\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn range_violations_fail_validation() {
        let err = parse("{\"id\":\"a\",\"truth\":[1],\"samples\":[[1.5]]}\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("outside [0, 1]"));
    }
}
