//! Label-frequency buckets and summaries across experiment configurations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::defaults::BUCKET_BOUNDARIES;
use crate::error::{Error, Result};
use crate::selective::SelectiveMetrics;

/// Fraction of training cases where each label is positive, indexed like
/// the label set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrequencySpec {
    pub fractions: Vec<f64>,
}

impl TrainingFrequencySpec {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if let Some(bad) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::InvalidParameter(format!("label frequency {bad} outside [0, 1]")));
        }
        Ok(Self { fractions })
    }
}

/// Upper bucket boundaries; bucket `k` covers `[b[k-1], b[k])` with `b[-1] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSpec {
    boundaries: Vec<f64>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self { boundaries: BUCKET_BOUNDARIES.to_vec() }
    }
}

impl BucketSpec {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InvalidParameter("bucket spec needs at least one boundary".into()));
        }
        if boundaries.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return Err(Error::InvalidParameter("bucket boundaries must lie in (0, 1]".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("bucket boundaries must be strictly increasing".into()));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn n_buckets(&self) -> usize {
        self.boundaries.len()
    }

    /// Human-readable range of bucket `k`, e.g. `10-20%`.
    pub fn bucket_name(&self, k: usize) -> String {
        let pct = |v: f64| format!("{}", (v * 1000.0).round() / 10.0);
        if k == 0 {
            format!("<{}%", pct(self.boundaries[0]))
        } else {
            format!("{}-{}%", pct(self.boundaries[k - 1]), pct(self.boundaries[k]))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketAssignment {
    /// Label indices per bucket.
    pub buckets: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl BucketAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    pub fn bucket_of(&self, label: usize) -> Option<usize> {
        self.buckets.iter().position(|b| b.contains(&label))
    }
}

/// Assigns every label to exactly one bucket.
///
/// Fractions outside `(0, last boundary]` are still assigned (zero to the
/// first bucket, larger values to the last) and reported as warnings.
pub fn bucketize(freq: &TrainingFrequencySpec, spec: &BucketSpec) -> BucketAssignment {
    let mut buckets = vec![Vec::new(); spec.n_buckets()];
    let mut warnings = Vec::new();
    let last = *spec.boundaries.last().expect("non-empty bucket spec");
    for (label, &f) in freq.fractions.iter().enumerate() {
        if f <= 0.0 || f > last {
            warnings.push(format!("label {label}: frequency {f} outside (0, {last}]"));
        }
        let k = spec.boundaries.iter().position(|&b| f < b).unwrap_or(spec.n_buckets() - 1);
        buckets[k].push(label);
    }
    BucketAssignment { buckets, warnings }
}

/// Identifies one experiment configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub estimator: String,
    pub loss: String,
    pub model: String,
}

impl ConfigKey {
    pub fn new(estimator: impl Into<String>, loss: impl Into<String>, model: impl Into<String>) -> Self {
        Self { estimator: estimator.into(), loss: loss.into(), model: model.into() }
    }

    pub fn axis_value(&self, axis: GroupAxis) -> &str {
        match axis {
            GroupAxis::Estimator => &self.estimator,
            GroupAxis::Loss => &self.loss,
            GroupAxis::Model => &self.model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupAxis {
    Estimator,
    Loss,
    Model,
}

impl GroupAxis {
    pub const ALL: [GroupAxis; 3] = [Self::Estimator, Self::Loss, Self::Model];

    pub fn name(self) -> &'static str {
        match self {
            Self::Estimator => "estimator",
            Self::Loss => "loss",
            Self::Model => "model",
        }
    }
}

impl fmt::Display for GroupAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigResult {
    pub key: ConfigKey,
    pub metrics: SelectiveMetrics,
    pub macro_f1: f64,
}

/// Rejects duplicate configuration keys and sorts by key.
pub fn sorted_results(mut results: Vec<ConfigResult>) -> Result<Vec<ConfigResult>> {
    results.sort_by(|a, b| a.key.cmp(&b.key));
    if let Some(w) = results.windows(2).find(|w| w[0].key == w[1].key) {
        return Err(Error::InvalidParameter(format!("duplicate configuration {:?}", w[0].key)));
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: usize,
    pub bucket_name: String,
    pub n_labels: usize,
    pub axis: GroupAxis,
    pub group: String,
    pub mean_rf: f64,
    /// (configuration, label) cells averaged; degenerate cells are skipped.
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BucketReport {
    pub rows: Vec<BucketRow>,
    pub notices: Vec<String>,
}

/// Mean refinement of each bucket's labels, grouped along every axis.
///
/// Rows are ordered by bucket, axis, then group value.
pub fn bucket_refinement_report(
    results: &[ConfigResult],
    assignment: &BucketAssignment,
    spec: &BucketSpec,
) -> Result<BucketReport> {
    let n_labels = results.first().map_or(0, |r| r.metrics.per_label.len());
    if results.iter().any(|r| r.metrics.per_label.len() != n_labels) {
        return Err(Error::ShapeMismatch("configurations disagree on the label count".into()));
    }
    let mut report = BucketReport::default();
    for (k, members) in assignment.buckets.iter().enumerate() {
        if members.is_empty() {
            report.notices.push(format!("bucket {} ({}) has no labels; omitted", k + 1, spec.bucket_name(k)));
            continue;
        }
        for axis in GroupAxis::ALL {
            let mut groups: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for r in results {
                let entry = groups.entry(r.key.axis_value(axis)).or_default();
                for &label in members {
                    if let Some(rf) = r.metrics.per_label[label].rf.defined() {
                        entry.0 += rf;
                        entry.1 += 1;
                    }
                }
            }
            for (group, (sum, cells)) in groups {
                if cells == 0 {
                    report.notices.push(format!(
                        "bucket {} {axis}={group}: refinement undefined for every member label",
                        k + 1
                    ));
                    continue;
                }
                report.rows.push(BucketRow {
                    bucket: k + 1,
                    bucket_name: spec.bucket_name(k),
                    n_labels: members.len(),
                    axis,
                    group: group.to_string(),
                    mean_rf: sum / cells as f64,
                    cells,
                });
            }
        }
    }
    Ok(report)
}

/// Unweighted mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub axis: GroupAxis,
    pub group: String,
    pub configs: usize,
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
}

type MetricGetter = fn(&ConfigResult) -> Option<f64>;

/// Mean ± std of each macro metric across the configurations in each group.
pub fn summarize_by(results: &[ConfigResult], axis: GroupAxis) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&ConfigResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.key.axis_value(axis)).or_default().push(r);
    }
    let metrics: [(&'static str, MetricGetter); 4] = [
        ("aurcc", |r| Some(r.metrics.macro_aurcc)),
        ("rpp", |r| Some(r.metrics.macro_rpp)),
        ("rf", |r| r.metrics.macro_rf),
        ("macro_f1", |r| Some(r.macro_f1)),
    ];
    let mut rows = Vec::new();
    for (group, members) in groups {
        for (name, get) in metrics {
            let values: Vec<f64> = members.iter().filter_map(|r| get(r)).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, std) = mean_and_std(&values);
            rows.push(SummaryRow { axis, group: group.to_string(), configs: members.len(), metric: name, mean, std });
        }
    }
    rows
}
