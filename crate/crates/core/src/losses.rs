//! Training objectives with analytic gradients.
//!
//! All losses follow the per-label binary decomposition: a logit `z` gives
//! `p = σ(z)`, the label's confidence is `max(p, 1 − p)` and its hard
//! decision is `p ≥ 0.5`. Gradients are returned with the same shape as the
//! logits they differentiate.
//!
//! The confident-error and ECE terms contain piecewise-constant pieces
//! (correctness indicators, bin membership, per-bin accuracy). Their
//! gradients hold those pieces fixed, which is the exact derivative away
//! from the switching points.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array, Array2, Array3, Dimension, Zip};

use crate::data::predicts_positive;
use crate::defaults::ECE_BINS;
use crate::error::{Error, Result};

/// Value, gradient and named sub-losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<D: Dimension> {
    pub value: f64,
    pub grad: Array<f64, D>,
    pub components: Vec<(&'static str, f64)>,
}

impl<D: Dimension> LossOutput<D> {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

/// A B×L batch of per-label logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub logits: Array2<f64>,
    pub truths: Array2<u8>,
    /// Regularizer weight λ.
    pub lambda: f64,
    /// ECE bin count M.
    pub bins: usize,
}

impl LossBatch {
    pub fn new(logits: Array2<f64>, truths: Array2<u8>) -> Result<Self> {
        let batch = Self { logits, truths, lambda: 0.0, bins: ECE_BINS };
        batch.check()?;
        Ok(batch)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bins = bins;
        self
    }

    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.logits.ncols()
    }

    /// Same batch with different logits.
    pub fn with_logits(&self, logits: Array2<f64>) -> Self {
        Self { logits, ..self.clone() }
    }

    fn check(&self) -> Result<()> {
        check_truths(&self.truths, self.logits.dim())?;
        if self.logits.nrows() == 0 || self.logits.ncols() == 0 {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        if self.logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidParameter("non-finite logit".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidParameter("regularizer weight must be finite".into()));
        }
        if self.bins == 0 {
            return Err(Error::InvalidParameter("ECE needs at least one bin".into()));
        }
        Ok(())
    }
}

fn check_truths(truths: &Array2<u8>, dim: (usize, usize)) -> Result<()> {
    if truths.dim() != dim {
        return Err(Error::ShapeMismatch(format!("logits are {dim:?}, truths are {:?}", truths.dim())));
    }
    if truths.iter().any(|&t| t > 1) {
        return Err(Error::InvalidParameter("truth entries must be 0 or 1".into()));
    }
    Ok(())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `max(p, 1 − p)` and its derivative with respect to the logit.
fn confidence_and_slope(z: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let dp = p * (1.0 - p);
    if predicts_positive(p) {
        (p, dp)
    } else {
        (1.0 - p, -dp)
    }
}

fn is_error(z: f64, truth: u8) -> bool {
    predicts_positive(sigmoid(z)) != (truth == 1)
}

/// Mean sigmoid cross-entropy over all B×L cells.
pub fn bce_task_loss(batch: &LossBatch) -> Result<LossOutput<ndarray::Ix2>> {
    batch.check()?;
    let cells = batch.logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(batch.logits.dim());
    Zip::from(&mut grad).and(&batch.logits).and(&batch.truths).for_each(|g, &z, &t| {
        let y = f64::from(t);
        // softplus(z) - y·z, written to avoid overflow
        value += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - y) / cells;
    });
    value /= cells;
    Ok(LossOutput { value, grad, components: vec![("task", value)] })
}

/// Confident-error regularizer.
///
/// Per label, every pair where instance `i` is misclassified and `j` is not
/// contributes `max(0, conf_i − conf_j)²`. The per-label sums are averaged
/// over labels.
pub fn cer_loss(batch: &LossBatch) -> Result<LossOutput<ndarray::Ix2>> {
    batch.check()?;
    let (b, l) = batch.logits.dim();
    if b < 2 {
        return Err(Error::InvalidParameter(format!("confident-error regularizer needs B ≥ 2, got {b}")));
    }
    let mut value = 0.0;
    let mut grad = Array2::zeros((b, l));
    for label in 0..l {
        let cells: Vec<(f64, f64, bool)> = (0..b)
            .map(|i| {
                let z = batch.logits[[i, label]];
                let (conf, slope) = confidence_and_slope(z);
                (conf, slope, is_error(z, batch.truths[[i, label]]))
            })
            .collect();
        for (i, &(ci, si, ei)) in cells.iter().enumerate() {
            if !ei {
                continue;
            }
            for (j, &(cj, sj, ej)) in cells.iter().enumerate() {
                let gap = ci - cj;
                if ej || gap <= 0.0 {
                    continue;
                }
                value += gap * gap;
                grad[[i, label]] += 2.0 * gap * si;
                grad[[j, label]] -= 2.0 * gap * sj;
            }
        }
    }
    let scale = 1.0 / l as f64;
    grad.mapv_inplace(|g| g * scale);
    value *= scale;
    Ok(LossOutput { value, grad, components: vec![("cer", value)] })
}

/// Index of the right-closed equal-width bin holding `conf`.
pub fn bin_index(conf: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut idx = (conf * m).ceil().max(1.0) as usize;
    // guard against `conf * m` rounding past an exact edge
    if idx > 1 && conf <= (idx - 1) as f64 / m {
        idx -= 1;
    }
    idx.min(bins) - 1
}

/// Binned gap between accuracy and mean confidence, averaged over labels.
pub fn ece_loss(batch: &LossBatch) -> Result<LossOutput<ndarray::Ix2>> {
    batch.check()?;
    let (b, l) = batch.logits.dim();
    let bins = batch.bins;
    let mut value = 0.0;
    let mut grad = Array2::zeros((b, l));
    for label in 0..l {
        let mut count = vec![0usize; bins];
        let mut correct = vec![0usize; bins];
        let mut conf_sum = vec![0.0; bins];
        let mut members = Vec::with_capacity(b);
        for i in 0..b {
            let z = batch.logits[[i, label]];
            let (conf, slope) = confidence_and_slope(z);
            let m = bin_index(conf, bins);
            count[m] += 1;
            correct[m] += usize::from(!is_error(z, batch.truths[[i, label]]));
            conf_sum[m] += conf;
            members.push((m, slope));
        }
        let mut direction = vec![0.0; bins];
        for m in 0..bins {
            if count[m] == 0 {
                continue;
            }
            let n = count[m] as f64;
            let gap = conf_sum[m] / n - correct[m] as f64 / n;
            value += n / b as f64 * gap.abs();
            direction[m] = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
        for (i, &(m, slope)) in members.iter().enumerate() {
            grad[[i, label]] = direction[m] * slope / b as f64;
        }
    }
    let scale = 1.0 / l as f64;
    grad.mapv_inplace(|g| g * scale);
    value *= scale;
    Ok(LossOutput { value, grad, components: vec![("ece", value)] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Regularizer {
    #[default]
    None,
    Cer,
    Ece,
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "task" => Ok(Self::None),
            "cer" => Ok(Self::Cer),
            "ece" => Ok(Self::Ece),
            other => Err(Error::InvalidParameter(format!("unknown regularizer {other:?}"))),
        }
    }
}

/// `task + λ·regularizer`. Components report the unweighted terms.
pub fn combined_loss(batch: &LossBatch, regularizer: Regularizer) -> Result<LossOutput<ndarray::Ix2>> {
    let task = bce_task_loss(batch)?;
    let reg = match regularizer {
        Regularizer::None => return Ok(task),
        Regularizer::Cer => cer_loss(batch)?,
        Regularizer::Ece => ece_loss(batch)?,
    };
    let mut grad = task.grad;
    grad.scaled_add(batch.lambda, &reg.grad);
    let value = task.value + batch.lambda * reg.value;
    let mut components = task.components;
    components.extend(reg.components);
    Ok(LossOutput { value, grad, components })
}

/// Logit slots of the three-way Gambler head.
pub const POSITIVE: usize = 0;
pub const NEGATIVE: usize = 1;
pub const ABSTAIN: usize = 2;

/// B×L×3 logits over {positive, negative, abstain}.
#[derive(Debug, Clone, PartialEq)]
pub struct GamblerBatch {
    pub logits: Array3<f64>,
    pub truths: Array2<u8>,
    /// Rejection reward r.
    pub reward: f64,
}

impl GamblerBatch {
    pub fn new(logits: Array3<f64>, truths: Array2<u8>, reward: f64) -> Result<Self> {
        let batch = Self { logits, truths, reward };
        batch.check()?;
        Ok(batch)
    }

    pub fn with_logits(&self, logits: Array3<f64>) -> Self {
        Self { logits, ..self.clone() }
    }

    fn check(&self) -> Result<()> {
        let (b, l, k) = self.logits.dim();
        if k != 3 {
            return Err(Error::ShapeMismatch(format!("Gambler head needs 3 logits per cell, got {k}")));
        }
        if b == 0 || l == 0 {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        check_truths(&self.truths, (b, l))?;
        if self.logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidParameter("non-finite logit".into()));
        }
        if self.reward.is_nan() || self.reward <= 1.0 || !self.reward.is_finite() {
            return Err(Error::InvalidParameter(format!("rejection reward must exceed 1, got {}", self.reward)));
        }
        Ok(())
    }
}

/// Softmax over the three Gambler logits.
pub fn gambler_probs(logits: [f64; 3]) -> [f64; 3] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|z| (z - max).exp());
    let total: f64 = e.iter().sum();
    e.map(|v| v / total)
}

/// `−log(p(y) + p(abs)/r)`, averaged over B×L.
pub fn gambler_loss(batch: &GamblerBatch) -> Result<LossOutput<ndarray::Ix3>> {
    batch.check()?;
    let (b, l, _) = batch.logits.dim();
    let cells = (b * l) as f64;
    let inv_r = 1.0 / batch.reward;
    let mut value = 0.0;
    let mut grad = Array3::zeros(batch.logits.dim());
    for i in 0..b {
        for j in 0..l {
            let z = [batch.logits[[i, j, 0]], batch.logits[[i, j, 1]], batch.logits[[i, j, 2]]];
            let p = gambler_probs(z);
            let target = if batch.truths[[i, j]] == 1 { POSITIVE } else { NEGATIVE };
            let mass = p[target] + p[ABSTAIN] * inv_r;
            value -= mass.ln();
            for k in 0..3 {
                let d_target = p[target] * (f64::from(u8::from(k == target)) - p[k]);
                let d_abstain = inv_r * p[ABSTAIN] * (f64::from(u8::from(k == ABSTAIN)) - p[k]);
                grad[[i, j, k]] = -(d_target + d_abstain) / mass / cells;
            }
        }
    }
    value /= cells;
    Ok(LossOutput { value, grad, components: vec![("gambler", value)] })
}

/// `1 − p(abs)`.
pub fn gambler_confidence(class_probs: [f64; 3]) -> Result<f64> {
    let total: f64 = class_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || class_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidParameter(format!("class probabilities {class_probs:?} are not normalized")));
    }
    Ok(1.0 - class_probs[ABSTAIN])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Bce,
    Cer,
    Ece,
    Gambler,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [Self::Bce, Self::Cer, Self::Ece, Self::Gambler];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bce => "bce",
            Self::Cer => "cer",
            Self::Ece => "ece",
            Self::Gambler => "gambler",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown loss {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    const LN2: f64 = std::f64::consts::LN_2;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn bce_examples() {
        for t in [0u8, 1] {
            let batch = LossBatch::new(array![[0.0]], array![[t]]).unwrap();
            let out = bce_task_loss(&batch).unwrap();
            assert!((out.value - LN2).abs() < 1e-15);
        }
        let sat = bce_task_loss(&LossBatch::new(array![[20.0]], array![[1]]).unwrap()).unwrap();
        assert!(sat.value < 1e-8 && sat.grad[[0, 0]].abs() < 1e-8);
        let far = bce_task_loss(&LossBatch::new(array![[-800.0]], array![[1]]).unwrap()).unwrap();
        assert_eq!(far.value, 800.0);
    }

    #[test]
    fn cer_examples() {
        // e = [1, 0], conf = [0.9, 0.6]
        let batch = LossBatch::new(array![[logit(0.9)], [logit(0.6)]], array![[0], [1]]).unwrap();
        let out = cer_loss(&batch).unwrap();
        assert!((out.value - 0.09).abs() < 1e-12);

        let all_correct = LossBatch::new(array![[2.0], [0.5], [-1.0]], array![[1], [1], [0]]).unwrap();
        assert_eq!(cer_loss(&all_correct).unwrap().value, 0.0);

        let equal_conf = LossBatch::new(array![[1.0], [-1.0]], array![[0], [0]]).unwrap();
        assert_eq!(cer_loss(&equal_conf).unwrap().value, 0.0);

        let single = LossBatch::new(array![[1.0]], array![[0]]).unwrap();
        assert!(cer_loss(&single).is_err());
    }

    #[test]
    fn cer_is_batch_permutation_invariant() {
        let logits = array![[2.0, -0.3], [0.4, 1.5], [-1.2, 0.9], [0.8, -2.0]];
        let truths = array![[0, 1], [1, 0], [1, 1], [0, 0]];
        let base = cer_loss(&LossBatch::new(logits.clone(), truths.clone()).unwrap()).unwrap().value;
        let order = [2, 0, 3, 1];
        let pl = Array2::from_shape_fn((4, 2), |(i, j)| logits[[order[i], j]]);
        let pt = Array2::from_shape_fn((4, 2), |(i, j)| truths[[order[i], j]]);
        let permuted = cer_loss(&LossBatch::new(pl, pt).unwrap()).unwrap().value;
        assert!((base - permuted).abs() < 1e-15);
    }

    #[test]
    fn ece_examples() {
        let confident = LossBatch::new(array![[40.0], [-40.0]], array![[1], [0]]).unwrap();
        assert!(ece_loss(&confident).unwrap().value < 1e-15);

        // conf 0.8 everywhere, 3 of 5 correct
        let z = logit(0.8);
        let batch = LossBatch::new(array![[z], [z], [z], [z], [z]], array![[1], [1], [1], [0], [0]])
            .unwrap()
            .with_bins(1);
        assert!((ece_loss(&batch).unwrap().value - 0.2).abs() < 1e-12);

        // all conf in one of ten bins: other nine are empty and add nothing
        let ten = batch.clone().with_bins(10);
        assert!((ece_loss(&ten).unwrap().value - 0.2).abs() < 1e-12);

        assert!(LossBatch::new(array![[0.0]], array![[0]]).unwrap().with_bins(0).check().is_err());
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.5, 10), 4);
        assert_eq!(bin_index(0.7, 10), 6);
        assert_eq!(bin_index(0.7000001, 10), 7);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.3, 1), 0);
    }

    #[test]
    fn combined_examples() {
        let batch = LossBatch::new(array![[logit(0.9)], [logit(0.6)]], array![[0], [1]]).unwrap();
        let task = bce_task_loss(&batch).unwrap();
        assert_eq!(combined_loss(&batch, Regularizer::Cer).unwrap().value, task.value);
        let weighted = combined_loss(&batch.clone().with_lambda(0.1), Regularizer::Cer).unwrap();
        assert!((weighted.value - (task.value + 0.009)).abs() < 1e-12);
        assert_eq!(weighted.component("task"), Some(task.value));
        assert!((weighted.component("cer").unwrap() - 0.09).abs() < 1e-12);
    }

    fn one_cell(z: [f64; 3], truth: u8, reward: f64) -> GamblerBatch {
        let logits = Array3::from_shape_vec((1, 1, 3), z.to_vec()).unwrap();
        GamblerBatch::new(logits, array![[truth]], reward).unwrap()
    }

    #[test]
    fn gambler_examples() {
        // p(abs) ≈ 0: plain cross-entropy on the true class
        let out = gambler_loss(&one_cell([1.0, 0.0, -800.0], 1, 5.0)).unwrap();
        let q = gambler_probs([1.0, 0.0, -800.0])[POSITIVE];
        assert!((out.value + q.ln()).abs() < 1e-12);

        // p(abs) ≈ 1: log r
        let out = gambler_loss(&one_cell([-800.0, -800.0, 0.0], 0, 6.5)).unwrap();
        assert!((out.value - 6.5f64.ln()).abs() < 1e-12);

        let logits = Array3::zeros((1, 1, 3));
        assert!(GamblerBatch::new(logits.clone(), array![[1]], 1.0).is_err());
        assert!(GamblerBatch::new(logits, array![[1]], 0.5).is_err());
    }

    #[test]
    fn gambler_approaches_cross_entropy_for_large_reward() {
        let z = [0.3, -0.2, 0.8];
        let ce = -gambler_probs(z)[POSITIVE].ln();
        let mut last = 0.0;
        for r in [1.5, 10.0, 1e3, 1e6] {
            let v = gambler_loss(&one_cell(z, 1, r)).unwrap().value;
            assert!(v > last && v <= ce);
            last = v;
        }
        assert!((ce - gambler_loss(&one_cell(z, 1, 1e6)).unwrap().value) < 1e-5);
        assert!((ce - gambler_loss(&one_cell(z, 1, 1e3)).unwrap().value) < 1e-2);
    }

    #[test]
    fn gambler_confidence_examples() {
        assert_eq!(gambler_confidence([0.6, 0.4, 0.0]).unwrap(), 1.0);
        assert_eq!(gambler_confidence([0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert!((gambler_confidence([0.5, 0.3, 0.2]).unwrap() - 0.8).abs() < 1e-15);
        assert!(gambler_confidence([0.5, 0.3, 0.3]).is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert_eq!("CER".parse::<Regularizer>().unwrap(), Regularizer::Cer);
    }
}
