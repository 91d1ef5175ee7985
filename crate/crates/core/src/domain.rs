//! Shared value types and exact LLR-matrix algebra.
//!
//! Class indices are 0-based everywhere inside the crate; the CLI converts to
//! 1-based labels at its file boundaries. Time indices are 0-based as well
//! (`t = 0` is the first frame); hitting times in [`Decision`] are frame
//! counts and therefore lie in `1..=T`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Posteriors are clamped to this floor before any logarithm is taken.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

/// Class labels of a batch together with the per-class index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    labels: Vec<usize>,
    num_classes: usize,
    per_class: Vec<Vec<usize>>,
}

impl Labels {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return invalid(format!("need at least 2 classes, got {num_classes}"));
        }
        let mut per_class = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return invalid(format!("label {y} of example {i} is outside 0..{num_classes}"));
            }
            per_class[y].push(i);
        }
        Ok(Self {
            labels,
            num_classes,
            per_class,
        })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Indices `I_k` of the examples labelled `k`.
    pub fn indices_of(&self, k: usize) -> &[usize] {
        &self.per_class[k]
    }

    /// Per-class counts `M_k`.
    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    pub fn count(&self, k: usize) -> usize {
        self.per_class[k].len()
    }

    /// Classes with at least one example.
    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes).filter(|&k| !self.per_class[k].is_empty())
    }

    /// Labels restricted to the given example indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Labels {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Labels::new(labels, self.num_classes).expect("subset of valid labels")
    }
}

/// `M` labelled sequences of `T` frames with `d` features each.
///
/// Features are stored sequence-major, frame-second, feature-minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    features: Vec<f64>,
    len: usize,
    dim: usize,
    labels: Labels,
}

impl SequenceBatch {
    pub fn new(features: Vec<f64>, len: usize, dim: usize, labels: Labels) -> Result<Self> {
        if len == 0 || dim == 0 {
            return invalid("sequence length and feature dimension must be positive");
        }
        if features.len() != labels.len() * len * dim {
            return invalid(format!(
                "feature tensor has {} values, expected {}x{}x{}",
                features.len(),
                labels.len(),
                len,
                dim
            ));
        }
        Ok(Self {
            features,
            len,
            dim,
            labels,
        })
    }

    pub fn num_sequences(&self) -> usize {
        self.labels.len()
    }

    /// Sequence length `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// The `T x d` frames of sequence `i`.
    pub fn sequence(&self, i: usize) -> &[f64] {
        let n = self.len * self.dim;
        &self.features[i * n..(i + 1) * n]
    }

    /// Sub-batch holding the given sequences, in order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        let mut features = Vec::with_capacity(indices.len() * self.len * self.dim);
        for &i in indices {
            features.extend_from_slice(self.sequence(i));
        }
        SequenceBatch {
            features,
            len: self.len,
            dim: self.dim,
            labels: self.labels.select(indices),
        }
    }
}

/// Per-timestep `K x K` LLR matrices, `values[t][k][l] = λ_kl(X^(1,t+1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrMatrixSeries {
    len: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LlrMatrixSeries {
    /// Wraps raw values after checking exact antisymmetry.
    pub fn new(values: Vec<f64>, len: usize, classes: usize) -> Result<Self> {
        check_shape(&values, len, classes)?;
        for t in 0..len {
            let m = &values[t * classes * classes..(t + 1) * classes * classes];
            for k in 0..classes {
                if m[k * classes + k] != 0.0 {
                    return invalid(format!("nonzero diagonal at t={t}, k={k}"));
                }
                for l in 0..k {
                    if m[k * classes + l] != -m[l * classes + k] {
                        return invalid(format!("matrix not antisymmetric at t={t}, ({k},{l})"));
                    }
                }
            }
        }
        Ok(Self {
            len,
            classes,
            values,
        })
    }

    pub fn zeros(len: usize, classes: usize) -> Self {
        Self {
            len,
            classes,
            values: vec![0.0; len * classes * classes],
        }
    }

    /// Skips the antisymmetry check; used for per-entry finite differences.
    #[cfg(test)]
    pub(crate) fn from_raw_unchecked(values: Vec<f64>, len: usize, classes: usize) -> Self {
        assert_eq!(values.len(), len * classes * classes);
        Self {
            len,
            classes,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize, l: usize) -> f64 {
        self.values[(t * self.classes + k) * self.classes + l]
    }

    /// Row-major `K x K` matrix at time `t`.
    pub fn matrix(&self, t: usize) -> &[f64] {
        let kk = self.classes * self.classes;
        &self.values[t * kk..(t + 1) * kk]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Elementwise likelihood-ratio view `Λ = exp(λ)`.
    pub fn likelihood_ratio(&self, t: usize, k: usize, l: usize) -> f64 {
        self.get(t, k, l).exp()
    }

    /// Largest violation of `λ_kl + λ_lm = λ_km` over all `t, k, l, m`.
    pub fn additivity_defect(&self) -> f64 {
        let c = self.classes;
        let mut worst: f64 = 0.0;
        for t in 0..self.len {
            for k in 0..c {
                for l in 0..c {
                    for m in 0..c {
                        let d = self.get(t, k, l) + self.get(t, l, m) - self.get(t, k, m);
                        worst = worst.max(d.abs());
                    }
                }
            }
        }
        worst
    }
}

fn check_shape(values: &[f64], len: usize, classes: usize) -> Result<()> {
    if classes < 2 {
        return invalid(format!("need at least 2 classes, got {classes}"));
    }
    if values.len() != len * classes * classes {
        return invalid(format!(
            "tensor has {} values, expected {}x{}x{}",
            values.len(),
            len,
            classes,
            classes
        ));
    }
    Ok(())
}

/// Projects a raw `T x K x K` tensor onto antisymmetric matrices:
/// `(raw[t,k,l] - raw[t,l,k]) / 2`.
pub fn antisymmetrize(raw: &[f64], len: usize, classes: usize) -> Result<LlrMatrixSeries> {
    check_shape(raw, len, classes)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite entry in raw LLR tensor");
    }
    let mut values = vec![0.0; raw.len()];
    let kk = classes * classes;
    for t in 0..len {
        let (src, dst) = (&raw[t * kk..(t + 1) * kk], &mut values[t * kk..(t + 1) * kk]);
        for k in 0..classes {
            for l in 0..k {
                let v = (src[k * classes + l] - src[l * classes + k]) / 2.0;
                dst[k * classes + l] = v;
                dst[l * classes + k] = -v;
            }
        }
    }
    Ok(LlrMatrixSeries {
        len,
        classes,
        values,
    })
}

/// Per-class log-scores `L_k(t)`; the LLR matrix is `λ_kl = L_k - L_l`.
///
/// Any LLR matrix built from scores is antisymmetric and additive by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    len: usize,
    classes: usize,
    scores: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(scores: Vec<f64>, len: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return invalid(format!("need at least 2 classes, got {classes}"));
        }
        if scores.len() != len * classes {
            return invalid(format!(
                "score tensor has {} values, expected {}x{}",
                scores.len(),
                len,
                classes
            ));
        }
        Ok(Self {
            len,
            classes,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.scores[t * self.classes..(t + 1) * self.classes]
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }

    pub fn to_llr(&self) -> LlrMatrixSeries {
        let c = self.classes;
        let mut values = vec![0.0; self.len * c * c];
        for t in 0..self.len {
            let s = self.at(t);
            for k in 0..c {
                for l in 0..c {
                    if k != l {
                        values[(t * c + k) * c + l] = s[k] - s[l];
                    }
                }
            }
        }
        LlrMatrixSeries {
            len: self.len,
            classes: c,
            values,
        }
    }
}

/// Windowed class posteriors `p̂(y | X^(t-w+1, t))`, stored as floored
/// log-probabilities for every end time `t` and window length
/// `w ∈ 1..=min(t+1, max_window)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSeries {
    len: usize,
    max_window: usize,
    classes: usize,
    log_probs: Vec<f64>,
}

impl PosteriorSeries {
    /// Empty series; every slot must be filled before use.
    pub fn new(len: usize, max_window: usize, classes: usize) -> Self {
        Self {
            len,
            max_window,
            classes,
            log_probs: vec![f64::NAN; len * max_window * classes],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_window(&self) -> usize {
        self.max_window
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    fn offset(&self, t: usize, w: usize) -> usize {
        (t * self.max_window + (w - 1)) * self.classes
    }

    fn check_slot(&self, t: usize, w: usize) -> Result<()> {
        if t >= self.len || w == 0 || w > self.max_window || w > t + 1 {
            return invalid(format!("no window of length {w} ending at t={t}"));
        }
        Ok(())
    }

    /// Stores log-probabilities, clamping each entry at `ln(POSTERIOR_FLOOR)`.
    pub fn set_log_probs(&mut self, t: usize, w: usize, log_probs: &[f64]) -> Result<()> {
        self.check_slot(t, w)?;
        if log_probs.len() != self.classes {
            return invalid("posterior vector has the wrong length");
        }
        let floor = POSTERIOR_FLOOR.ln();
        let off = self.offset(t, w);
        for (dst, &v) in self.log_probs[off..off + self.classes].iter_mut().zip(log_probs) {
            if v.is_nan() {
                return invalid("NaN log-posterior");
            }
            *dst = v.max(floor);
        }
        Ok(())
    }

    /// Stores a probability vector (normalised here, then floored).
    pub fn set_probs(&mut self, t: usize, w: usize, probs: &[f64]) -> Result<()> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("posterior entries must be finite and nonnegative");
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return invalid("posterior vector sums to zero");
        }
        let logs: Vec<f64> = probs
            .iter()
            .map(|p| (p / total).max(POSTERIOR_FLOOR).ln())
            .collect();
        self.set_log_probs(t, w, &logs)
    }

    /// Log-posterior vector of the window of length `w` ending at `t`.
    pub fn log_probs(&self, t: usize, w: usize) -> Result<&[f64]> {
        self.check_slot(t, w)?;
        let off = self.offset(t, w);
        let v = &self.log_probs[off..off + self.classes];
        if v[0].is_nan() {
            return invalid(format!("window of length {w} ending at t={t} was never filled"));
        }
        Ok(v)
    }

    pub fn probs(&self, t: usize, w: usize) -> Result<Vec<f64>> {
        Ok(self.log_probs(t, w)?.iter().map(|v| v.exp()).collect())
    }
}

/// Decision thresholds `a_kl` in nats. The diagonal is stored as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMatrix {
    classes: usize,
    values: Vec<f64>,
    scalar: Option<f64>,
}

impl ThresholdMatrix {
    /// Single-valued threshold matrix.
    pub fn scalar(classes: usize, a: f64) -> Result<Self> {
        if !a.is_finite() {
            return invalid("threshold must be finite");
        }
        let mut values = vec![a; classes * classes];
        for k in 0..classes {
            values[k * classes + k] = 0.0;
        }
        Ok(Self {
            classes,
            values,
            scalar: Some(a),
        })
    }

    pub fn from_matrix(classes: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != classes * classes {
            return invalid("threshold matrix has the wrong size");
        }
        let mut first = None;
        let mut uniform = true;
        for k in 0..classes {
            for l in 0..classes {
                let v = values[k * classes + l];
                if k == l {
                    continue;
                }
                if !v.is_finite() {
                    return invalid(format!("threshold a_{k}{l} is not finite"));
                }
                match first {
                    None => first = Some(v),
                    Some(f) if f != v => uniform = false,
                    _ => {}
                }
            }
        }
        for k in 0..classes {
            values[k * classes + k] = 0.0;
        }
        Ok(Self {
            classes,
            values,
            scalar: if uniform { first } else { None },
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.classes + l]
    }

    /// The common off-diagonal value when the matrix is single-valued.
    pub fn scalar_value(&self) -> Option<f64> {
        self.scalar
    }

    pub fn is_scalar(&self) -> bool {
        self.scalar.is_some()
    }
}

/// One violated cost-matrix invariant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostViolation {
    NonFinite { k: usize, l: usize },
    Negative { k: usize, l: usize },
    NonzeroDiagonal { k: usize },
    ZeroRowSum { k: usize },
}

impl fmt::Display for CostViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostViolation::NonFinite { k, l } => write!(f, "non-finite entry at ({k},{l})"),
            CostViolation::Negative { k, l } => write!(f, "negative entry at ({k},{l})"),
            CostViolation::NonzeroDiagonal { k } => write!(f, "nonzero diagonal at {k}"),
            CostViolation::ZeroRowSum { k } => write!(f, "zero row sum in row {k}"),
        }
    }
}

/// Checks every cost-matrix invariant and reports all violations.
pub fn validate_cost_matrix(
    classes: usize,
    values: &[f64],
) -> std::result::Result<(), Vec<CostViolation>> {
    assert_eq!(values.len(), classes * classes, "cost matrix must be K x K");
    let mut out = Vec::new();
    for k in 0..classes {
        let row = &values[k * classes..(k + 1) * classes];
        for (l, &c) in row.iter().enumerate() {
            if !c.is_finite() {
                out.push(CostViolation::NonFinite { k, l });
            } else if c < 0.0 {
                out.push(CostViolation::Negative { k, l });
            }
        }
        if row[k] != 0.0 {
            out.push(CostViolation::NonzeroDiagonal { k });
        }
        if row.iter().sum::<f64>() == 0.0 {
            out.push(CostViolation::ZeroRowSum { k });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Misclassification cost matrix `C_kl` (true class `k`, prediction `l`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    classes: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != classes * classes {
            return invalid("cost matrix has the wrong size");
        }
        if let Err(violations) = validate_cost_matrix(classes, &values) {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return invalid(format!("invalid cost matrix: {}", msg.join(", ")));
        }
        Ok(Self { classes, values })
    }

    /// `C_kl = 1` off the diagonal.
    pub fn uniform(classes: usize) -> Self {
        Self::row_constant(&vec![1.0; classes]).expect("unit costs are valid")
    }

    /// `C_kl = row[k]` for `l ≠ k`.
    pub fn row_constant(row: &[f64]) -> Result<Self> {
        let k = row.len();
        let mut values = vec![0.0; k * k];
        for (i, &c) in row.iter().enumerate() {
            for j in 0..k {
                if i != j {
                    values[i * k + j] = c;
                }
            }
        }
        Self::new(k, values)
    }

    /// `C_kl = ν̂_kl^{-1} = M_l / M_k`.
    pub fn inverse_prior_ratio(priors: &ClassPriorStats) -> Result<Self> {
        let k = priors.num_classes();
        let mut values = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    values[i * k + j] = 1.0 / priors.ratio(i, j)?;
                }
            }
        }
        Self::new(k, values)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.classes + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `C_k` when every off-diagonal entry of row `k` is equal.
    pub fn row_value(&self, k: usize) -> Option<f64> {
        let mut it = (0..self.classes).filter(|&l| l != k).map(|l| self.get(k, l));
        let first = it.next()?;
        it.all(|v| v == first).then_some(first)
    }

    pub fn is_row_constant(&self) -> bool {
        (0..self.classes).all(|k| self.row_value(k).is_some())
    }
}

/// Class counts and the empirical prior ratio `ν̂_kl = M_k / M_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriorStats {
    counts: Vec<usize>,
}

impl ClassPriorStats {
    pub fn new(counts: Vec<usize>) -> Self {
        Self { counts }
    }

    pub fn from_labels(labels: &Labels) -> Self {
        Self::new(labels.counts())
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn ratio(&self, k: usize, l: usize) -> Result<f64> {
        if self.counts[l] == 0 {
            return Err(Error::EmptyClass(l));
        }
        if self.counts[k] == 0 {
            return Err(Error::EmptyClass(k));
        }
        Ok(self.counts[k] as f64 / self.counts[l] as f64)
    }

    /// `log M_k`, or `None` for an absent class.
    pub fn log_count(&self, k: usize) -> Option<f64> {
        (self.counts[k] > 0).then(|| (self.counts[k] as f64).ln())
    }
}

/// Outcome of a sequential test on one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    /// 0-based predicted class.
    pub predicted: usize,
    /// Number of frames observed at the stop, in `1..=T`.
    pub hitting_time: usize,
    /// Set when no threshold was crossed and the decision was forced at `T`.
    pub forced: bool,
}

/// Class-score vector `s`; `λ_kl` plays the role of `s_k - s_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Membership in the support set `S_k`: `s_k > s_l` for every `l ≠ k`.
    pub fn in_support(&self, k: usize) -> bool {
        self.0
            .iter()
            .enumerate()
            .all(|(l, &v)| l == k || self.0[k] > v)
    }

    /// Membership in the arbitrary-guess set: all entries equal.
    pub fn is_arbitrary_guess(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }
}

/// `min_{l≠k} (λ_kl(t) - a_lk)`.
pub fn min_rival_margin(
    llr: &LlrMatrixSeries,
    t: usize,
    k: usize,
    thresholds: &ThresholdMatrix,
) -> Result<f64> {
    let c = llr.num_classes();
    if c < 2 {
        return invalid("need at least 2 classes");
    }
    if t >= llr.len() {
        return invalid(format!("time {t} outside series of length {}", llr.len()));
    }
    if k >= c || thresholds.num_classes() != c {
        return invalid("class index or threshold size mismatch");
    }
    Ok(rival_margin(llr.matrix(t), c, k, thresholds))
}

#[inline]
pub(crate) fn rival_margin(m: &[f64], c: usize, k: usize, thresholds: &ThresholdMatrix) -> f64 {
    let mut best = f64::INFINITY;
    for l in 0..c {
        if l != k {
            best = best.min(m[k * c + l] - thresholds.get(l, k));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn antisymmetrize_examples() {
        let raw = vec![0.0, 3.0, 1.0, 0.0];
        let out = antisymmetrize(&raw, 1, 2).unwrap();
        assert_eq!(out.get(0, 0, 1), 1.0);
        assert_eq!(out.get(0, 1, 0), -1.0);
        assert_eq!(out.get(0, 0, 0), 0.0);

        let zeros = antisymmetrize(&[0.0; 18], 2, 3).unwrap();
        assert!(zeros.values().iter().all(|&v| v == 0.0));

        assert!(matches!(
            antisymmetrize(&[0.0, f64::NAN, 0.0, 0.0], 1, 2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn min_rival_margin_examples() {
        let zero = LlrMatrixSeries::zeros(2, 3);
        let a0 = ThresholdMatrix::scalar(3, 0.0).unwrap();
        for k in 0..3 {
            assert_eq!(min_rival_margin(&zero, 1, k, &a0).unwrap(), 0.0);
        }
        let raw = vec![0.0, 5.0, 2.0, -5.0, 0.0, 0.0, -2.0, 0.0, 0.0];
        let llr = LlrMatrixSeries::new(raw, 1, 3).unwrap();
        let a1 = ThresholdMatrix::scalar(3, 1.0).unwrap();
        assert_eq!(min_rival_margin(&llr, 0, 0, &a1).unwrap(), 1.0);
        assert!(min_rival_margin(&llr, 1, 0, &a1).is_err());
    }

    #[test]
    fn cost_matrix_validation() {
        assert!(validate_cost_matrix(3, CostMatrix::uniform(3).values()).is_ok());
        let mut c = CostMatrix::uniform(2).values().to_vec();
        c[0] = 1.0;
        let v = validate_cost_matrix(2, &c).unwrap_err();
        assert!(v.iter().any(|v| v.to_string().contains("nonzero diagonal")));
        let z = vec![0.0, 0.0, 1.0, 0.0];
        let v = validate_cost_matrix(2, &z).unwrap_err();
        assert_eq!(v, vec![CostViolation::ZeroRowSum { k: 0 }]);
        assert!(v[0].to_string().contains("zero row sum"));
        let neg = vec![0.0, -1.0, 1.0, 0.0];
        assert!(matches!(
            validate_cost_matrix(2, &neg).unwrap_err()[0],
            CostViolation::Negative { k: 0, l: 1 }
        ));
    }

    #[test]
    fn prior_ratio_is_reciprocal() {
        let p = ClassPriorStats::new(vec![3, 5, 7]);
        for k in 0..3 {
            assert_eq!(p.ratio(k, k).unwrap(), 1.0);
            for l in 0..3 {
                let prod = p.ratio(k, l).unwrap() * p.ratio(l, k).unwrap();
                assert!((prod - 1.0).abs() < 1e-15);
            }
        }
        assert!(matches!(
            ClassPriorStats::new(vec![1, 0]).ratio(0, 1),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn labels_reject_out_of_range() {
        assert!(Labels::new(vec![0, 2], 2).is_err());
        assert!(Labels::new(vec![0], 1).is_err());
        let l = Labels::new(vec![1, 0, 1], 2).unwrap();
        assert_eq!(l.indices_of(1), &[0, 2]);
        assert_eq!(l.counts(), vec![1, 2]);
    }

    #[test]
    fn posterior_floor_applies() {
        let mut p = PosteriorSeries::new(2, 2, 2);
        p.set_probs(1, 2, &[1.0, 0.0]).unwrap();
        let lp = p.log_probs(1, 2).unwrap();
        assert_eq!(lp[1], POSTERIOR_FLOOR.ln());
        assert!(p.set_probs(0, 2, &[0.5, 0.5]).is_err());
        assert!(p.log_probs(0, 1).is_err());
    }

    #[test]
    fn score_vector_sets() {
        assert!(ScoreVector(vec![3.0, 2.0, -1.0]).in_support(0));
        assert!(!ScoreVector(vec![3.0, 3.0, -1.0]).in_support(0));
        assert!(ScoreVector(vec![0.5; 4]).is_arbitrary_guess());
    }

    fn brute_margin(llr: &LlrMatrixSeries, t: usize, k: usize, a: &ThresholdMatrix) -> f64 {
        let mut vals = Vec::new();
        for l in 0..llr.num_classes() {
            if l != k {
                vals.push(llr.get(t, k, l) - a.get(l, k));
            }
        }
        vals.into_iter().fold(f64::INFINITY, f64::min)
    }

    proptest! {
        #[test]
        fn antisymmetrize_is_idempotent(raw in prop::collection::vec(-10.0f64..10.0, 2 * 4 * 4)) {
            let once = antisymmetrize(&raw, 2, 4).unwrap();
            let twice = antisymmetrize(once.values(), 2, 4).unwrap();
            prop_assert_eq!(&once, &twice);
            for t in 0..2 {
                for k in 0..4 {
                    for l in 0..4 {
                        prop_assert_eq!(once.get(t, k, l), -once.get(t, l, k));
                    }
                }
            }
            prop_assert!(LlrMatrixSeries::new(once.values().to_vec(), 2, 4).is_ok());
        }

        #[test]
        fn margin_matches_brute_force(
            raw in prop::collection::vec(-10.0f64..10.0, 3 * 4 * 4),
            thr in prop::collection::vec(-3.0f64..3.0, 16),
        ) {
            let llr = antisymmetrize(&raw, 3, 4).unwrap();
            let a = ThresholdMatrix::from_matrix(4, thr).unwrap();
            for t in 0..3 {
                for k in 0..4 {
                    prop_assert_eq!(min_rival_margin(&llr, t, k, &a).unwrap(), brute_margin(&llr, t, k, &a));
                }
            }
        }
    }
}
