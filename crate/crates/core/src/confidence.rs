//! Confidence estimators over per-label probabilities.
//!
//! Each estimator maps a label's probability (or its MC-dropout samples) to a
//! real confidence where larger means more confident. In the binary view the
//! class distribution of a label is `(p, 1 − p)`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{mean, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Softmax response.
    Sr,
    /// Sampled maximum probability.
    Smp,
    /// Negated probability variance.
    Pv,
    /// Negated BALD mutual information.
    Bald,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Sr, Self::Smp, Self::Pv, Self::Bald];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sr => "sr",
            Self::Smp => "smp",
            Self::Pv => "pv",
            Self::Bald => "bald",
        }
    }

    pub fn needs_samples(self) -> bool {
        !matches!(self, Self::Sr)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(Self::Sr),
            "smp" => Ok(Self::Smp),
            "pv" => Ok(Self::Pv),
            "bald" => Ok(Self::Bald),
            other => Err(Error::InvalidParameter(format!("unknown estimator {other:?}"))),
        }
    }
}

/// How the BALD disagreement term is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaldConvention {
    /// Mutual information `H(p̄) − (1/N)·Σ H(pₙ)`, negated.
    #[default]
    Standard,
    /// `Σ_y p̄_y log p̄_y + Σ_{y,n} pₙ_y log pₙ_y`, with no 1/N on the second sum.
    PaperLiteral,
}

impl FromStr for BaldConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper-literal" | "paper_literal" => Ok(Self::PaperLiteral),
            other => Err(Error::InvalidParameter(format!("unknown BALD convention {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub bald_convention: BaldConvention,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, bald_convention: BaldConvention::default() }
    }

    pub fn bald(convention: BaldConvention) -> Self {
        Self { kind: EstimatorKind::Bald, bald_convention: convention }
    }

    /// Confidence of one record/label cell.
    pub fn apply(&self, decision_prob: f64, samples: &[f64]) -> Result<f64> {
        match self.kind {
            EstimatorKind::Sr => sr_confidence(decision_prob),
            EstimatorKind::Smp => smp_confidence(samples),
            EstimatorKind::Pv => pv_confidence(samples),
            EstimatorKind::Bald => bald_confidence(samples, self.bald_convention),
        }
    }
}

impl From<EstimatorKind> for EstimatorSpec {
    fn from(kind: EstimatorKind) -> Self {
        Self::new(kind)
    }
}

/// |D|×L confidences produced by one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    pub values: Array2<f64>,
    pub estimator: EstimatorSpec,
}

impl ConfidenceMatrix {
    pub fn n_records(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, label: usize) -> Vec<f64> {
        self.values.column(label).to_vec()
    }
}

fn check_prob(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::ProbabilityOutOfRange(p))
    }
}

fn check_samples(samples: &[f64], estimator: &'static str) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { estimator, samples: samples.len() });
    }
    samples.iter().try_for_each(|&p| check_prob(p).map(|_| ()))
}

/// `max(p, 1 − p)`.
pub fn sr_confidence(p: f64) -> Result<f64> {
    let p = check_prob(p)?;
    Ok(p.max(1.0 - p))
}

/// SR applied to the sample mean.
pub fn smp_confidence(samples: &[f64]) -> Result<f64> {
    check_samples(samples, "smp")?;
    let avg = mean(samples);
    Ok(avg.max(1.0 - avg))
}

/// Negated population variance of the positive-class probability.
///
/// Averaging the variance over both classes gives the same value because
/// `Var(p) = Var(1 − p)`.
pub fn pv_confidence(samples: &[f64]) -> Result<f64> {
    check_samples(samples, "pv")?;
    let avg = mean(samples);
    let sq: Vec<f64> = samples.iter().map(|&p| (p - avg) * (p - avg)).collect();
    Ok(-mean(&sq) + 0.0)
}

/// `q·ln q` with `0·ln 0 = 0`.
fn xlogx(q: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        q * q.ln()
    }
}

/// Binary entropy in nats.
fn entropy(p: f64) -> f64 {
    -(xlogx(p) + xlogx(1.0 - p))
}

pub fn bald_confidence(samples: &[f64], convention: BaldConvention) -> Result<f64> {
    check_samples(samples, "bald")?;
    let avg = mean(samples);
    match convention {
        BaldConvention::Standard => {
            let sample_entropy: Vec<f64> = samples.iter().map(|&p| entropy(p)).collect();
            let mutual_info = entropy(avg) - mean(&sample_entropy);
            // rounding can push a zero MI marginally negative
            Ok(-mutual_info.max(0.0) + 0.0)
        }
        BaldConvention::PaperLiteral => {
            let summed: f64 = samples.iter().map(|&p| xlogx(p) + xlogx(1.0 - p)).sum();
            Ok(xlogx(avg) + xlogx(1.0 - avg) + summed)
        }
    }
}

/// Applies `spec` to every record/label cell.
pub fn estimate_confidences(d: &Dataset, spec: EstimatorSpec) -> Result<ConfidenceMatrix> {
    if spec.kind.needs_samples() && d.n_samples() < 2 {
        return Err(Error::TooFewSamples { estimator: spec.kind.name(), samples: d.n_samples() });
    }
    let mut values = Array2::zeros((d.len(), d.n_labels()));
    for label in 0..d.n_labels() {
        let view = d.binary_view(label)?;
        for (i, rec) in d.records().iter().enumerate() {
            let samples = if spec.kind.needs_samples() { rec.label_samples(label) } else { Vec::new() };
            values[[i, label]] = spec.apply(view.decision_probs[i], &samples)?;
        }
    }
    Ok(ConfidenceMatrix { values, estimator: spec })
}
