//! Prediction records, datasets and the per-label binary decomposition.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::defaults::DECISION_THRESHOLD;
use crate::error::{Error, Result};

/// Articles used by the default label profile.
pub const ECTHR_ARTICLES: [&str; 14] = [
    "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "P1-1",
];

/// Ordered, duplicate-free label identifiers. Position is the label index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidDataset("label set is empty".into()));
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// The fourteen convention articles.
    pub fn ecthr() -> Self {
        Self { labels: ECTHR_ARTICLES.iter().map(|s| s.to_string()).collect() }
    }

    /// Labels named `0..n` when the input carries no header.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.labels
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.labels
    }
}

/// One instance: ground truth plus N sampled probability rows and an
/// optional deterministic row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub truth: Vec<u8>,
    pub samples: Vec<Vec<f64>>,
    #[serde(rename = "det", default, skip_serializing_if = "Option::is_none")]
    pub det_probs: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// The N sampled probabilities for one label.
    pub fn label_samples(&self, label: usize) -> Vec<f64> {
        self.samples.iter().map(|row| row[label]).collect()
    }

    /// Probability used for the hard decision: the deterministic pass when
    /// present, otherwise the sample mean.
    pub fn decision_prob(&self, label: usize) -> f64 {
        match &self.det_probs {
            Some(det) => det[label],
            None => mean(&self.label_samples(label)),
        }
    }
}

/// A problem found by [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    NoSamples { record: usize },
    DimensionMismatch { record: usize, detail: String },
    SampleCountMismatch { record: usize, expected: usize, actual: usize },
    OutOfRange { record: usize, location: String, value: f64 },
    NotANumber { record: usize, location: String },
    NonBinaryTruth { record: usize, label: usize, value: u8 },
    DuplicateId { record: usize, id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "dataset has no records"),
            Violation::NoSamples { record } => write!(f, "record {record}: no probability samples"),
            Violation::DimensionMismatch { record, detail } => {
                write!(f, "record {record}: dimension mismatch ({detail})")
            }
            Violation::SampleCountMismatch { record, expected, actual } => {
                write!(f, "record {record}: {actual} samples, dataset uses {expected}")
            }
            Violation::OutOfRange { record, location, value } => {
                write!(f, "record {record}: {location} = {value} outside [0, 1]")
            }
            Violation::NotANumber { record, location } => write!(f, "record {record}: {location} is NaN"),
            Violation::NonBinaryTruth { record, label, value } => {
                write!(f, "record {record}: truth[{label}] = {value}, expected 0 or 1")
            }
            Violation::DuplicateId { record, id } => write!(f, "record {record}: duplicate id {id:?}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label_set: LabelSet,
    records: Vec<PredictionRecord>,
}

impl Dataset {
    /// Builds a dataset and rejects it unless [`Dataset::validate`] is clean.
    pub fn new(label_set: LabelSet, records: Vec<PredictionRecord>) -> Result<Self> {
        let dataset = Self::from_parts(label_set, records);
        let report = dataset.validate();
        if report.is_valid() {
            Ok(dataset)
        } else {
            Err(Error::InvalidDataset(report.to_string()))
        }
    }

    /// Builds a dataset without checking it.
    pub fn from_parts(label_set: LabelSet, records: Vec<PredictionRecord>) -> Self {
        Self { label_set, records }
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_labels(&self) -> usize {
        self.label_set.len()
    }

    /// Samples per record (N), taken from the first record.
    pub fn n_samples(&self) -> usize {
        self.records.first().map_or(0, PredictionRecord::n_samples)
    }

    /// Whether every record carries a deterministic probability row.
    pub fn has_det_probs(&self) -> bool {
        self.records.iter().all(|r| r.det_probs.is_some())
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.records.is_empty() {
            violations.push(Violation::Empty);
        }
        let n_labels = self.label_set.len();
        let expected_n = self.n_samples();
        let mut ids = HashSet::with_capacity(self.records.len());

        for (idx, rec) in self.records.iter().enumerate() {
            if !ids.insert(rec.instance_id.as_str()) {
                violations.push(Violation::DuplicateId { record: idx, id: rec.instance_id.clone() });
            }
            if rec.truth.len() != n_labels {
                violations.push(Violation::DimensionMismatch {
                    record: idx,
                    detail: format!("truth has {} entries, expected {n_labels}", rec.truth.len()),
                });
            }
            for (l, &t) in rec.truth.iter().enumerate() {
                if t > 1 {
                    violations.push(Violation::NonBinaryTruth { record: idx, label: l, value: t });
                }
            }
            if rec.samples.is_empty() {
                violations.push(Violation::NoSamples { record: idx });
            } else if rec.samples.len() != expected_n {
                violations.push(Violation::SampleCountMismatch {
                    record: idx,
                    expected: expected_n,
                    actual: rec.samples.len(),
                });
            }
            for (n, row) in rec.samples.iter().enumerate() {
                check_row(&mut violations, idx, &format!("samples[{n}]"), row, n_labels);
            }
            if let Some(det) = &rec.det_probs {
                check_row(&mut violations, idx, "det", det, n_labels);
            }
        }
        ValidationReport { violations }
    }

    /// Per-label binary decomposition used by every downstream metric.
    pub fn binary_view(&self, label: usize) -> Result<BinaryLabelView> {
        if label >= self.n_labels() {
            return Err(Error::LabelOutOfRange { index: label, labels: self.n_labels() });
        }
        let decision_probs: Vec<f64> = self.records.iter().map(|r| r.decision_prob(label)).collect();
        let losses = self
            .records
            .iter()
            .zip(&decision_probs)
            .map(|(r, &p)| u8::from(predicts_positive(p) != (r.truth[label] == 1)))
            .collect();
        Ok(BinaryLabelView { label_index: label, losses, decision_probs })
    }
}

fn check_row(out: &mut Vec<Violation>, record: usize, name: &str, row: &[f64], n_labels: usize) {
    if row.len() != n_labels {
        out.push(Violation::DimensionMismatch {
            record,
            detail: format!("{name} has {} entries, expected {n_labels}", row.len()),
        });
    }
    for (l, &p) in row.iter().enumerate() {
        if p.is_nan() {
            out.push(Violation::NotANumber { record, location: format!("{name}[{l}]") });
        } else if !(0.0..=1.0).contains(&p) {
            out.push(Violation::OutOfRange { record, location: format!("{name}[{l}]"), value: p });
        }
    }
}

/// One label's view of the dataset: hard decisions and their 0/1 losses.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLabelView {
    pub label_index: usize,
    /// 1 where the hard decision disagrees with the truth.
    pub losses: Vec<u8>,
    pub decision_probs: Vec<f64>,
}

impl BinaryLabelView {
    /// Builds a view directly from a loss vector, for metrics that only need
    /// losses.
    pub fn from_losses(losses: Vec<u8>) -> Self {
        let decision_probs = vec![f64::NAN; losses.len()];
        Self { label_index: 0, losses, decision_probs }
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Number of correct predictions (c).
    pub fn n_correct(&self) -> usize {
        self.losses.iter().filter(|&&l| l == 0).count()
    }

    pub fn error_rate(&self) -> f64 {
        if self.losses.is_empty() {
            return 0.0;
        }
        (self.len() - self.n_correct()) as f64 / self.len() as f64
    }
}

/// `p ≥ 0.5` predicts positive.
pub fn predicts_positive(p: f64) -> bool {
    p >= DECISION_THRESHOLD
}

/// Arithmetic mean that is exact for constant inputs and independent of
/// input order.
///
/// Values are sorted and accumulated as offsets from the minimum, so N copies
/// of `p` average to exactly `p`.
pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let base = sorted[0];
    let offset: f64 = sorted.iter().map(|&v| v - base).sum();
    base + offset / sorted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, truth: Vec<u8>, samples: Vec<Vec<f64>>, det: Option<Vec<f64>>) -> PredictionRecord {
        PredictionRecord { instance_id: id.into(), truth, samples, det_probs: det }
    }

    fn two_by_three() -> Dataset {
        Dataset::from_parts(
            LabelSet::numbered(3).unwrap(),
            vec![
                record("a", vec![1, 0, 0], vec![vec![0.9, 0.1, 0.2], vec![0.8, 0.2, 0.3]], None),
                record("b", vec![0, 1, 1], vec![vec![0.1, 0.7, 0.6], vec![0.3, 0.9, 0.4]], Some(vec![0.2, 0.8, 0.5])),
            ],
        )
    }

    #[test]
    fn well_formed_dataset_is_valid() {
        assert!(two_by_three().validate().is_valid());
    }

    #[test]
    fn out_of_range_probability_reported_once() {
        let mut d = two_by_three();
        d.records[0].samples[1][2] = 1.5;
        let report = d.validate();
        assert_eq!(report.len(), 1);
        assert!(matches!(report.violations[0], Violation::OutOfRange { record: 0, value, .. } if value == 1.5));
    }

    #[test]
    fn duplicate_id_reported_once() {
        let mut d = two_by_three();
        d.records[1].instance_id = "a".into();
        let report = d.validate();
        assert_eq!(report.violations, vec![Violation::DuplicateId { record: 1, id: "a".into() }]);
    }

    #[test]
    fn nan_and_dimension_problems_reported() {
        let mut d = two_by_three();
        d.records[0].det_probs = Some(vec![f64::NAN, 0.5]);
        d.records[1].samples.pop();
        let report = d.validate();
        assert!(report.violations.iter().any(|v| matches!(v, Violation::NotANumber { .. })));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::DimensionMismatch { .. })));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::SampleCountMismatch { .. })));
        assert!(Dataset::new(d.label_set.clone(), d.records.clone()).is_err());
    }

    #[test]
    fn empty_and_duplicate_labels_rejected() {
        assert!(LabelSet::new(Vec::<String>::new()).is_err());
        assert!(LabelSet::new(["a", "b", "a"]).is_err());
        assert_eq!(LabelSet::ecthr().len(), 14);
    }

    #[test]
    fn binary_view_decisions() {
        let labels = LabelSet::numbered(1).unwrap();
        let d = Dataset::new(
            labels,
            vec![
                record("correct", vec![1], vec![vec![0.3]], Some(vec![0.9])),
                record("mean", vec![0], vec![vec![0.6], vec![0.8]], None),
                record("boundary", vec![1], vec![vec![0.1]], Some(vec![0.5])),
            ],
        );
        // Mixed N is invalid; build views record by record instead.
        assert!(d.is_err());

        let one = |r: PredictionRecord| {
            Dataset::from_parts(LabelSet::numbered(1).unwrap(), vec![r]).binary_view(0).unwrap()
        };
        let v = one(record("a", vec![1], vec![vec![0.3]], Some(vec![0.9])));
        assert_eq!(v.losses, vec![0]);
        let v = one(record("b", vec![0], vec![vec![0.6], vec![0.8]], None));
        assert!((v.decision_probs[0] - 0.7).abs() < 1e-12);
        assert_eq!(v.losses, vec![1]);
        let v = one(record("c", vec![1], vec![vec![0.1]], Some(vec![0.5])));
        assert_eq!(v.losses, vec![0]);
    }

    #[test]
    fn binary_view_rejects_bad_label() {
        let d = two_by_three();
        assert_eq!(d.binary_view(3), Err(Error::LabelOutOfRange { index: 3, labels: 3 }));
    }

    #[test]
    fn single_sample_decision_is_exact() {
        let d = Dataset::from_parts(
            LabelSet::numbered(2).unwrap(),
            vec![record("a", vec![0, 1], vec![vec![0.123456789, 0.987654321]], None)],
        );
        assert_eq!(d.binary_view(0).unwrap().decision_probs, vec![0.123456789]);
        assert_eq!(d.binary_view(1).unwrap().decision_probs, vec![0.987654321]);
    }

    #[test]
    fn mean_of_constant_is_exact() {
        for &p in &[0.1, 0.3, 0.7, 1.0 / 3.0] {
            assert_eq!(mean(&[p; 10]), p);
        }
    }
}
