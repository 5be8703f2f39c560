//! Selection, risk–coverage analysis and the selective metric suite.
//!
//! A selective classifier predicts on an instance when its confidence is
//! strictly above a per-label threshold γ and abstains otherwise. Sweeping γ
//! traces the risk–coverage curve; AURCC summarizes it, while RPP and
//! refinement measure how well the confidence ranks errors below correct
//! predictions.
//!
//! Tied confidences are never split: a threshold either admits all instances
//! sharing a value or none of them, so every curve point corresponds to an
//! attainable γ.

use serde::Serialize;

use crate::confidence::ConfidenceMatrix;
use crate::data::{predicts_positive, BinaryLabelView, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Predict,
    Abstain,
}

/// `g(x) = 1[confidence > γ]`.
pub fn select(confidence: f64, threshold: f64) -> Selection {
    if confidence > threshold {
        Selection::Predict
    } else {
        Selection::Abstain
    }
}

/// Per-label thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPolicy {
    thresholds: Vec<f64>,
}

impl SelectionPolicy {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if let Some(bad) = thresholds.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(format!("threshold {bad} is not finite")));
        }
        Ok(Self { thresholds })
    }

    pub fn threshold(&self, label: usize) -> f64 {
        self.thresholds[label]
    }

    pub fn select(&self, label: usize, confidence: f64) -> Selection {
        select(confidence, self.thresholds[label])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageRisk {
    pub coverage: f64,
    /// `None` when nothing is selected.
    pub risk: Option<f64>,
}

fn check_lengths(view: &BinaryLabelView, conf: &[f64]) -> Result<()> {
    if view.len() != conf.len() {
        return Err(Error::LengthMismatch { expected: view.len(), actual: conf.len() });
    }
    Ok(())
}

pub fn coverage_risk(view: &BinaryLabelView, conf: &[f64], threshold: f64) -> Result<CoverageRisk> {
    check_lengths(view, conf)?;
    let (mut selected, mut errors) = (0usize, 0usize);
    for (&c, &l) in conf.iter().zip(&view.losses) {
        if select(c, threshold) == Selection::Predict {
            selected += 1;
            errors += l as usize;
        }
    }
    let coverage = if view.is_empty() { 0.0 } else { selected as f64 / view.len() as f64 };
    let risk = (selected > 0).then(|| errors as f64 / selected as f64);
    Ok(CoverageRisk { coverage, risk })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub coverage: f64,
    pub risk: f64,
    /// Confidence of the tie-block that closes this point.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCoverageCurve {
    pub label_index: usize,
    pub points: Vec<CurvePoint>,
}

impl RiskCoverageCurve {
    /// Number of distinct confidence values.
    pub fn tie_groups(&self) -> usize {
        self.points.len()
    }
}

/// Sorts by descending confidence and emits one point per tie-block.
pub fn risk_coverage_curve(view: &BinaryLabelView, conf: &[f64]) -> Result<RiskCoverageCurve> {
    check_lengths(view, conf)?;
    if view.is_empty() {
        return Err(Error::InvalidParameter("risk–coverage curve of an empty view".into()));
    }
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));

    let n = conf.len() as f64;
    let mut points = Vec::new();
    let (mut covered, mut errors) = (0usize, 0usize);
    for (pos, &i) in order.iter().enumerate() {
        covered += 1;
        errors += view.losses[i] as usize;
        let block_ends = order.get(pos + 1).is_none_or(|&next| conf[next] != conf[i]);
        if block_ends {
            points.push(CurvePoint {
                coverage: covered as f64 / n,
                risk: errors as f64 / covered as f64,
                confidence: conf[i],
            });
        }
    }
    Ok(RiskCoverageCurve { label_index: view.label_index, points })
}

/// Right-endpoint rectangle rule over coverage increments.
pub fn aurcc(curve: &RiskCoverageCurve) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.coverage - prev) * p.risk;
        prev = p.coverage;
    }
    area
}

/// Ordered pairs `(i, j)` with `conf_i < conf_j` and `l_i < l_j`, i.e. a
/// correct prediction ranked strictly below an error.
pub fn reversed_pairs(view: &BinaryLabelView, conf: &[f64]) -> Result<u64> {
    check_lengths(view, conf)?;
    let mut wrong: Vec<f64> = conf
        .iter()
        .zip(&view.losses)
        .filter(|(_, &l)| l == 1)
        .map(|(&c, _)| c)
        .collect();
    wrong.sort_by(f64::total_cmp);
    let count = conf
        .iter()
        .zip(&view.losses)
        .filter(|(_, &l)| l == 0)
        .map(|(&c, _)| (wrong.len() - wrong.partition_point(|&w| w <= c)) as u64)
        .sum();
    Ok(count)
}

/// Reversed pair proportion, normalized by `|D|²`.
pub fn rpp(view: &BinaryLabelView, conf: &[f64]) -> Result<f64> {
    let pairs = reversed_pairs(view, conf)?;
    let n = view.len() as f64;
    Ok(if view.is_empty() { 0.0 } else { pairs as f64 / (n * n) })
}

/// Refinement; undefined when every prediction is correct or every one is
/// wrong.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Refinement {
    Defined(f64),
    Degenerate,
}

impl Refinement {
    /// Reported value; degenerate labels report 0.
    pub fn value(self) -> f64 {
        match self {
            Refinement::Defined(v) => v,
            Refinement::Degenerate => 0.0,
        }
    }

    pub fn defined(self) -> Option<f64> {
        match self {
            Refinement::Defined(v) => Some(v),
            Refinement::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Refinement::Degenerate)
    }
}

pub fn refinement(view: &BinaryLabelView, conf: &[f64]) -> Result<Refinement> {
    let pairs = reversed_pairs(view, conf)?;
    let c = view.n_correct();
    if c == 0 || c == view.len() {
        return Ok(Refinement::Degenerate);
    }
    let worst = c as f64 * (view.len() - c) as f64;
    Ok(Refinement::Defined(pairs as f64 / worst))
}

/// What macro refinement does with labels where refinement is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    #[default]
    Exclude,
    IncludeAsZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMetrics {
    pub label_index: usize,
    pub aurcc: f64,
    pub rpp: f64,
    pub rf: Refinement,
    pub n_correct: usize,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveMetrics {
    pub per_label: Vec<LabelMetrics>,
    pub macro_aurcc: f64,
    pub macro_rpp: f64,
    /// `None` when every label is degenerate and the policy excludes them.
    pub macro_rf: Option<f64>,
    pub degenerate_labels: Vec<usize>,
}

impl SelectiveMetrics {
    pub fn label(&self, index: usize) -> &LabelMetrics {
        &self.per_label[index]
    }
}

/// Metrics of one label given its confidence column.
pub fn label_metrics(view: &BinaryLabelView, conf: &[f64]) -> Result<LabelMetrics> {
    let curve = risk_coverage_curve(view, conf)?;
    Ok(LabelMetrics {
        label_index: view.label_index,
        aurcc: aurcc(&curve),
        rpp: rpp(view, conf)?,
        rf: refinement(view, conf)?,
        n_correct: view.n_correct(),
        error_rate: view.error_rate(),
    })
}

fn check_shape(d: &Dataset, conf: &ConfidenceMatrix) -> Result<()> {
    if conf.n_records() != d.len() || conf.n_labels() != d.n_labels() {
        return Err(Error::ShapeMismatch(format!(
            "dataset is {}×{}, confidences are {}×{}",
            d.len(),
            d.n_labels(),
            conf.n_records(),
            conf.n_labels()
        )));
    }
    Ok(())
}

pub fn macro_metrics(d: &Dataset, conf: &ConfidenceMatrix) -> Result<SelectiveMetrics> {
    macro_metrics_with(d, conf, DegeneratePolicy::default())
}

pub fn macro_metrics_with(d: &Dataset, conf: &ConfidenceMatrix, policy: DegeneratePolicy) -> Result<SelectiveMetrics> {
    check_shape(d, conf)?;
    let per_label = (0..d.n_labels())
        .map(|l| label_metrics(&d.binary_view(l)?, &conf.column(l)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per_label, policy))
}

/// Macro averages over already computed per-label metrics.
pub fn summarize(per_label: Vec<LabelMetrics>, policy: DegeneratePolicy) -> SelectiveMetrics {
    let n = per_label.len() as f64;
    let macro_aurcc = per_label.iter().map(|m| m.aurcc).sum::<f64>() / n;
    let macro_rpp = per_label.iter().map(|m| m.rpp).sum::<f64>() / n;
    let degenerate_labels: Vec<usize> =
        per_label.iter().filter(|m| m.rf.is_degenerate()).map(|m| m.label_index).collect();
    let rf_values: Vec<f64> = match policy {
        DegeneratePolicy::Exclude => per_label.iter().filter_map(|m| m.rf.defined()).collect(),
        DegeneratePolicy::IncludeAsZero => per_label.iter().map(|m| m.rf.value()).collect(),
    };
    let macro_rf = (!rf_values.is_empty()).then(|| rf_values.iter().sum::<f64>() / rf_values.len() as f64);
    SelectiveMetrics { per_label, macro_aurcc, macro_rpp, macro_rf, degenerate_labels }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelF1 {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_label: Vec<LabelF1>,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from counts; zero when there are no true positives.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> LabelF1 {
    LabelF1 {
        tp,
        fp,
        fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

/// Per-label and macro F1 of the 0.5-threshold decisions.
pub fn macro_f1(d: &Dataset) -> F1Report {
    let per_label: Vec<LabelF1> = (0..d.n_labels())
        .map(|l| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for rec in d.records() {
                match (predicts_positive(rec.decision_prob(l)), rec.truth[l] == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            f1_from_counts(tp, fp, fn_)
        })
        .collect();
    let macro_f1 = per_label.iter().map(|m| m.f1).sum::<f64>() / per_label.len() as f64;
    F1Report { per_label, macro_f1 }
}
