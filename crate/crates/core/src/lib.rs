//! Selective-prediction evaluation for multi-label classifiers.
//!
//! Every label is treated as its own binary task: a record's probability for
//! a label and its complement form the two-class distribution the confidence
//! estimators work on, and thresholds, curves and metrics are computed per
//! label before macro averaging.
//!
//! * [`data`]: records, datasets, validation and the per-label binary view.
//! * [`confidence`]: SR, SMP, PV and BALD confidence estimators.
//! * [`selective`]: selection, coverage/risk, risk–coverage curves, AURCC,
//!   RPP, refinement and macro-F1.
//! * [`losses`]: BCE, confident-error regularizer, ECE and Gambler's losses
//!   with analytic gradients.
//! * [`analysis`]: frequency buckets and cross-configuration summaries.
//! * [`testkit`]: synthetic data and brute-force oracles.

pub mod analysis;
pub mod confidence;
pub mod data;
pub mod defaults;
mod error;
pub mod losses;
pub mod selective;
pub mod testkit;

pub use confidence::{BaldConvention, ConfidenceMatrix, EstimatorKind, EstimatorSpec};
pub use data::{BinaryLabelView, Dataset, LabelSet, PredictionRecord, ValidationReport, Violation};
pub use error::{Error, Result};
pub use selective::{LabelMetrics, RiskCoverageCurve, SelectiveMetrics};
