//! Synthetic datasets and independent brute-force oracles.
//!
//! The oracles here deliberately re-derive everything from the metric
//! definitions (no sorting tricks, no shared helpers with `selective` or
//! `losses`) so they can be used to check the fast implementations.

use ndarray::{Array, Array2, Array3, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::Serialize;

use crate::data::{BinaryLabelView, Dataset, LabelSet, PredictionRecord};
use crate::defaults::{ECE_BINS, GAMBLER_REWARDS};
use crate::error::{Error, Result};
use crate::losses::{self, GamblerBatch, LossBatch, LossKind};

/// Seeded generator shared by the synthetic data and the gradient suite.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    Calibrated,
    /// Logits multiplied by a temperature above one.
    Overconfident(f64),
    /// Logits multiplied by a temperature in (0, 1).
    Underconfident(f64),
}

impl CalibrationMode {
    pub fn temperature(self) -> f64 {
        match self {
            Self::Calibrated => 1.0,
            Self::Overconfident(t) | Self::Underconfident(t) => t,
        }
    }

    /// Picks the mode implied by a temperature.
    pub fn from_temperature(t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {t}")));
        }
        Ok(if t == 1.0 {
            Self::Calibrated
        } else if t > 1.0 {
            Self::Overconfident(t)
        } else {
            Self::Underconfident(t)
        })
    }

    fn check(self) -> Result<()> {
        let ok = match self {
            Self::Calibrated => true,
            Self::Overconfident(t) => t > 1.0 && t.is_finite(),
            Self::Underconfident(t) => t > 0.0 && t < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("inconsistent calibration mode {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub n_labels: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub calibration: CalibrationMode,
    /// Mean latent probability per label; empty means 0.5 everywhere.
    pub base_rates: Vec<f64>,
    /// Half-width of the uniform noise added to each MC sample.
    pub noise_width: f64,
}

impl SyntheticSpec {
    pub fn new(n_records: usize, n_labels: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            n_records,
            n_labels,
            n_samples,
            seed,
            calibration: CalibrationMode::Calibrated,
            base_rates: Vec::new(),
            noise_width: 0.1,
        }
    }

    pub fn with_calibration(mut self, mode: CalibrationMode) -> Self {
        self.calibration = mode;
        self
    }

    pub fn with_noise(mut self, width: f64) -> Self {
        self.noise_width = width;
        self
    }

    pub fn with_base_rates(mut self, rates: Vec<f64>) -> Self {
        self.base_rates = rates;
        self
    }

    fn check(&self) -> Result<()> {
        if self.n_records == 0 || self.n_labels == 0 || self.n_samples == 0 {
            return Err(Error::InvalidParameter("records, labels and samples must all be positive".into()));
        }
        self.calibration.check()?;
        if !(0.0..=1.0).contains(&self.noise_width) {
            return Err(Error::InvalidParameter(format!("noise width {} outside [0, 1]", self.noise_width)));
        }
        if !self.base_rates.is_empty() && self.base_rates.len() != self.n_labels {
            return Err(Error::InvalidParameter("one base rate per label required".into()));
        }
        if self.base_rates.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidParameter("base rates must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

const LATENT_CONCENTRATION: f64 = 2.0;
const LATENT_CLAMP: f64 = 1e-6;

/// Draws a dataset whose truths follow the latent probabilities.
///
/// For each (record, label) a latent `q ~ Beta(κb, κ(1 − b))` is drawn and
/// the truth sampled from Bernoulli(q). The reported deterministic
/// probability is `σ(t · logit q)`, and the N MC samples add uniform noise to
/// it, clipped to [0, 1]. With `t = 1` the reported probabilities are
/// calibrated.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.check()?;
    let mut rng = rng(spec.seed);
    let rates = if spec.base_rates.is_empty() { vec![0.5; spec.n_labels] } else { spec.base_rates.clone() };
    let latents = rates
        .iter()
        .map(|&b| Beta::new(LATENT_CONCENTRATION * b, LATENT_CONCENTRATION * (1.0 - b)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let t = spec.calibration.temperature();

    let mut records = Vec::with_capacity(spec.n_records);
    for i in 0..spec.n_records {
        let mut truth = Vec::with_capacity(spec.n_labels);
        let mut det = Vec::with_capacity(spec.n_labels);
        for latent in &latents {
            let q: f64 = latent.sample(&mut rng).clamp(LATENT_CLAMP, 1.0 - LATENT_CLAMP);
            truth.push(u8::from(rng.random::<f64>() < q));
            det.push(if t == 1.0 { q } else { logistic(t * (q / (1.0 - q)).ln()) });
        }
        let samples = (0..spec.n_samples)
            .map(|_| {
                det.iter()
                    .map(|&p| {
                        if spec.noise_width == 0.0 {
                            p
                        } else {
                            (p + rng.random_range(-spec.noise_width..=spec.noise_width)).clamp(0.0, 1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        records.push(PredictionRecord { instance_id: format!("syn-{i:06}"), truth, samples, det_probs: Some(det) });
    }
    Dataset::new(LabelSet::numbered(spec.n_labels)?, records)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

const ORACLE_MAX_N: usize = 10_000;

fn oracle_guard(view: &BinaryLabelView, conf: &[f64]) -> Result<()> {
    if view.losses.len() != conf.len() {
        return Err(Error::LengthMismatch { expected: view.losses.len(), actual: conf.len() });
    }
    if conf.len() > ORACLE_MAX_N {
        return Err(Error::InvalidParameter(format!("oracle limited to {ORACLE_MAX_N} instances")));
    }
    if conf.is_empty() {
        return Err(Error::InvalidParameter("oracle needs at least one instance".into()));
    }
    Ok(())
}

/// Reversed pair proportion by exhaustive enumeration of ordered pairs.
pub fn rpp_oracle(view: &BinaryLabelView, conf: &[f64]) -> Result<f64> {
    oracle_guard(view, conf)?;
    let n = conf.len();
    let mut reversed = 0u64;
    for i in 0..n {
        for j in 0..n {
            if conf[i] < conf[j] && view.losses[i] < view.losses[j] {
                reversed += 1;
            }
        }
    }
    Ok(reversed as f64 / (n as f64 * n as f64))
}

/// AURCC by sweeping every distinct confidence as a threshold and
/// evaluating coverage and risk from their definitions.
pub fn aurcc_oracle(view: &BinaryLabelView, conf: &[f64]) -> Result<f64> {
    oracle_guard(view, conf)?;
    let mut levels: Vec<f64> = Vec::new();
    for &c in conf {
        if !levels.contains(&c) {
            levels.push(c);
        }
    }
    levels.sort_by(|a, b| b.partial_cmp(a).expect("finite confidences"));

    let n = conf.len() as f64;
    let mut area = 0.0;
    let mut prev_coverage = 0.0;
    for level in levels {
        // every instance with confidence ≥ level, i.e. γ just below level
        let mut selected = 0.0;
        let mut loss = 0.0;
        for (i, &c) in conf.iter().enumerate() {
            if c >= level {
                selected += 1.0;
                loss += f64::from(view.losses[i]);
            }
        }
        let coverage = selected / n;
        let risk = (loss / n) / coverage;
        area += (coverage - prev_coverage) * risk;
        prev_coverage = coverage;
    }
    Ok(area)
}

const FD_MAX_COORDS: usize = 1_000;

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient<D, F>(f: F, x: &Array<f64, D>, step: f64) -> Result<Array<f64, D>>
where
    D: Dimension,
    F: Fn(&Array<f64, D>) -> f64,
{
    if x.len() > FD_MAX_COORDS {
        return Err(Error::InvalidParameter(format!("finite differences limited to {FD_MAX_COORDS} coordinates")));
    }
    let mut probe = x.as_standard_layout().into_owned();
    let mut grad = Array::zeros(x.raw_dim());
    for k in 0..x.len() {
        let orig = probe.as_slice().expect("standard layout")[k];
        probe.as_slice_mut().expect("standard layout")[k] = orig + step;
        let up = f(&probe);
        probe.as_slice_mut().expect("standard layout")[k] = orig - step;
        let down = f(&probe);
        probe.as_slice_mut().expect("standard layout")[k] = orig;
        grad.as_slice_mut().expect("fresh array")[k] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Denominator floor for [`relative_error`].
///
/// Gradient entries can pass through zero (the Gambler abstain logit does
/// whenever `p(y) = (1 − p(abs))/r`), where central differences carry
/// ~1e-11 of rounding noise. Below the floor the comparison is absolute.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateError {
    pub batch: usize,
    pub index: Vec<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut index = vec![0; shape.len()];
    for (slot, &extent) in index.iter_mut().zip(shape).rev() {
        *slot = flat % extent;
        flat /= extent;
    }
    index
}

fn worst_coordinate<D: Dimension>(batch: usize, analytic: &Array<f64, D>, numeric: &Array<f64, D>) -> CoordinateError {
    let analytic = analytic.as_standard_layout();
    let numeric = numeric.as_standard_layout();
    let mut worst = CoordinateError { batch, index: Vec::new(), analytic: 0.0, numeric: 0.0, rel_error: -1.0 };
    for (k, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let err = relative_error(a, n);
        if err > worst.rel_error {
            worst = CoordinateError { batch, index: unravel(k, analytic.shape()), analytic: a, numeric: n, rel_error: err };
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSuiteConfig {
    pub batches: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Minimum distance from a hinge, decision or bin edge.
    pub exclusion: f64,
    /// Perturbs one analytic gradient entry per batch; a negative control.
    pub inject_fault: bool,
}

impl Default for GradientSuiteConfig {
    fn default() -> Self {
        Self { batches: 100, seed: 0x5e1ec7, step: 1e-5, tolerance: 1e-6, exclusion: 1e-4, inject_fault: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientSuiteReport {
    pub loss: String,
    pub batches: usize,
    pub coordinates: usize,
    /// Batches redrawn because they fell inside the exclusion zone.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub worst: CoordinateError,
    pub tolerance: f64,
    pub passed: bool,
}

fn random_binary_batch(rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<u8>) {
    let b = rng.random_range(2..=6);
    let l = rng.random_range(1..=4);
    let logits = Array2::from_shape_simple_fn((b, l), || rng.random_range(-3.0..3.0));
    let truths = Array2::from_shape_simple_fn((b, l), || u8::from(rng.random_bool(0.5)));
    (logits, truths)
}

struct Cell {
    conf: f64,
    wrong: bool,
    p: f64,
}

fn cells(logits: &Array2<f64>, truths: &Array2<u8>, label: usize) -> Vec<Cell> {
    (0..logits.nrows())
        .map(|i| {
            let p = logistic(logits[[i, label]]);
            let predicted = if p >= 0.5 { 1 } else { 0 };
            Cell { conf: if p >= 0.5 { p } else { 1.0 - p }, wrong: predicted != truths[[i, label]], p }
        })
        .collect()
}

fn near_cer_switch(logits: &Array2<f64>, truths: &Array2<u8>, eps: f64) -> bool {
    (0..logits.ncols()).any(|label| {
        let cs = cells(logits, truths, label);
        cs.iter().any(|c| (c.p - 0.5).abs() < eps)
            || cs.iter().any(|a| a.wrong && cs.iter().any(|b| !b.wrong && (a.conf - b.conf).abs() < eps))
    })
}

fn near_ece_switch(logits: &Array2<f64>, truths: &Array2<u8>, bins: usize, eps: f64) -> bool {
    (0..logits.ncols()).any(|label| {
        let cs = cells(logits, truths, label);
        if cs.iter().any(|c| (c.p - 0.5).abs() < eps) {
            return true;
        }
        if cs.iter().any(|c| (0..=bins).any(|k| (c.conf - k as f64 / bins as f64).abs() < eps)) {
            return true;
        }
        // a bin whose accuracy equals its mean confidence sits on the |·| kink
        (0..bins).any(|k| {
            let lo = k as f64 / bins as f64;
            let hi = (k + 1) as f64 / bins as f64;
            let members: Vec<&Cell> = cs.iter().filter(|c| c.conf > lo && c.conf <= hi).collect();
            if members.is_empty() {
                return false;
            }
            let m = members.len() as f64;
            let acc = members.iter().filter(|c| !c.wrong).count() as f64 / m;
            let conf = members.iter().map(|c| c.conf).sum::<f64>() / m;
            (acc - conf).abs() < eps
        })
    })
}

/// Compares analytic gradients against central differences on random
/// batches, redrawing batches that land near a non-differentiable point.
pub fn gradient_suite(kind: LossKind, cfg: &GradientSuiteConfig) -> Result<GradientSuiteReport> {
    let mut rng = rng(cfg.seed ^ (kind as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut worst: Option<CoordinateError> = None;
    let mut coordinates = 0;
    let mut redrawn = 0;
    let mut keep = |err: CoordinateError| {
        if worst.as_ref().is_none_or(|w| err.rel_error > w.rel_error) {
            worst = Some(err);
        }
    };

    for batch_no in 0..cfg.batches {
        let err = match kind {
            LossKind::Gambler => {
                let (_, truths) = random_binary_batch(&mut rng);
                let (b, l) = truths.dim();
                let logits = Array3::from_shape_simple_fn((b, l, 3), || rng.random_range(-2.0..2.0));
                let rewards: Vec<f64> = GAMBLER_REWARDS.iter().copied().filter(|&r| r > 1.0).collect();
                let reward = rewards[rng.random_range(0..rewards.len())];
                let batch = GamblerBatch::new(logits, truths, reward)?;
                let mut analytic = losses::gambler_loss(&batch)?.grad;
                if cfg.inject_fault {
                    analytic[[0, 0, 0]] *= 1.0 + 1e-3;
                }
                let numeric = fd_gradient(
                    |x| losses::gambler_loss(&batch.with_logits(x.clone())).map(|o| o.value).unwrap_or(f64::NAN),
                    &batch.logits,
                    cfg.step,
                )?;
                coordinates += analytic.len();
                worst_coordinate(batch_no, &analytic, &numeric)
            }
            _ => {
                let (logits, truths) = loop {
                    let (logits, truths) = random_binary_batch(&mut rng);
                    let excluded = match kind {
                        LossKind::Cer => near_cer_switch(&logits, &truths, cfg.exclusion),
                        LossKind::Ece => near_ece_switch(&logits, &truths, ECE_BINS, cfg.exclusion),
                        _ => false,
                    };
                    if !excluded {
                        break (logits, truths);
                    }
                    redrawn += 1;
                };
                let batch = LossBatch::new(logits, truths)?;
                let eval = |b: &LossBatch| match kind {
                    LossKind::Bce => losses::bce_task_loss(b),
                    LossKind::Cer => losses::cer_loss(b),
                    LossKind::Ece => losses::ece_loss(b),
                    LossKind::Gambler => unreachable!(),
                };
                let mut analytic = eval(&batch)?.grad;
                if cfg.inject_fault {
                    analytic[[0, 0]] = analytic[[0, 0]] * (1.0 + 1e-3) + 1e-9;
                }
                let numeric = fd_gradient(
                    |x| eval(&batch.with_logits(x.clone())).map(|o| o.value).unwrap_or(f64::NAN),
                    &batch.logits,
                    cfg.step,
                )?;
                coordinates += analytic.len();
                worst_coordinate(batch_no, &analytic, &numeric)
            }
        };
        keep(err);
    }
    let worst = worst.ok_or_else(|| Error::InvalidParameter("gradient suite needs at least one batch".into()))?;
    Ok(GradientSuiteReport {
        loss: kind.name().to_string(),
        batches: cfg.batches,
        coordinates,
        redrawn,
        max_rel_error: worst.rel_error,
        passed: worst.rel_error <= cfg.tolerance,
        tolerance: cfg.tolerance,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fd_recovers_quadratic_gradient() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        let g = fd_gradient(|v| v.iter().map(|a| 3.0 * a * a + a).sum(), &x, 1e-5).unwrap();
        for (gi, xi) in g.iter().zip(x.iter()) {
            assert!((gi - (6.0 * xi + 1.0)).abs() < 1e-8);
        }
        let big = Array2::<f64>::zeros((40, 30));
        assert!(fd_gradient(|v| v.sum(), &big, 1e-5).is_err());
    }

    #[test]
    fn unravel_row_major() {
        assert_eq!(unravel(5, &[2, 3]), vec![1, 2]);
        assert_eq!(unravel(7, &[2, 2, 3]), vec![1, 0, 1]);
    }

    #[test]
    fn oracle_worked_example() {
        let view = BinaryLabelView::from_losses(vec![0, 1, 0, 1]);
        let conf = [0.9, 0.8, 0.7, 0.6];
        assert_eq!(rpp_oracle(&view, &conf).unwrap(), 0.0625);
        assert!((aurcc_oracle(&view, &conf).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rpp_oracle(&view, &[0.5; 4]).unwrap(), 0.0);
        assert_eq!(aurcc_oracle(&view, &[0.5; 4]).unwrap(), 0.5);
    }

    #[test]
    fn oracle_size_guard() {
        let view = BinaryLabelView::from_losses(vec![0; ORACLE_MAX_N + 1]);
        assert!(rpp_oracle(&view, &vec![0.0; ORACLE_MAX_N + 1]).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec::new(20, 3, 4, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_ne!(generate(&spec).unwrap(), generate(&SyntheticSpec { seed: 10, ..spec }).unwrap());
    }

    #[test]
    fn zero_noise_copies_det_row() {
        let d = generate(&SyntheticSpec::new(10, 2, 5, 1).with_noise(0.0)).unwrap();
        for r in d.records() {
            for row in &r.samples {
                assert_eq!(Some(row), r.det_probs.as_ref());
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&SyntheticSpec::new(0, 1, 1, 0)).is_err());
        assert!(generate(&SyntheticSpec::new(1, 1, 1, 0).with_calibration(CalibrationMode::Overconfident(0.5))).is_err());
        assert!(generate(&SyntheticSpec::new(1, 2, 1, 0).with_base_rates(vec![0.5])).is_err());
        assert!(CalibrationMode::from_temperature(0.0).is_err());
        assert_eq!(CalibrationMode::from_temperature(2.0).unwrap(), CalibrationMode::Overconfident(2.0));
    }

    #[test]
    fn calibrated_generator_matches_decile_confidence() {
        let d = generate(&SyntheticSpec::new(20_000, 5, 1, 3)).unwrap();
        let mut sum_conf = [0.0; 10];
        let mut hits = [0.0; 10];
        let mut count = [0.0; 10];
        for r in d.records() {
            let det = r.det_probs.as_ref().unwrap();
            for (l, &p) in det.iter().enumerate() {
                let k = ((p * 10.0) as usize).min(9);
                sum_conf[k] += p;
                hits[k] += f64::from(r.truth[l]);
                count[k] += 1.0;
            }
        }
        for k in 0..10 {
            assert!(count[k] > 1000.0);
            let gap = (hits[k] / count[k] - sum_conf[k] / count[k]).abs();
            assert!(gap < 0.02, "decile {k}: gap {gap}");
        }
    }
}
