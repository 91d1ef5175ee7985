//! The matrix SPRT, the Neyman-Pearson fixed-time rule and error-rate
//! estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{rival_margin, Decision, Labels, LlrMatrixSeries, ThresholdMatrix};
use crate::error::{invalid, Error, Result};
use crate::oracle::GaussianSource;

/// Runs the MSPRT on one LLR series.
///
/// Class `k` crosses at time `t` when `min_{l≠k}(λ_kl(t) − a_lk) ≥ 0`. The test
/// stops at the first time any class crosses; simultaneous crossings go to
/// the largest margin, then the smallest index. At `t = T` every threshold is
/// collapsed to zero, and if still no class crosses the decision falls back
/// to [`np_test`] at `T`. `forced` is set when the original thresholds were
/// never crossed.
pub fn run_msprt(llr: &LlrMatrixSeries, thresholds: &ThresholdMatrix) -> Result<Decision> {
    let k = llr.num_classes();
    if thresholds.num_classes() != k {
        return invalid("threshold matrix size does not match the LLR series");
    }
    if llr.is_empty() {
        return invalid("empty LLR series");
    }
    let len = llr.len();
    for t in 0..len - 1 {
        if let Some(c) = crossing_class(llr.matrix(t), k, thresholds) {
            return Ok(Decision {
                predicted: c,
                hitting_time: t + 1,
                forced: false,
            });
        }
    }
    let last = llr.matrix(len - 1);
    let forced = crossing_class(last, k, thresholds).is_none();
    let zero = ThresholdMatrix::scalar(k, 0.0)?;
    let predicted = crossing_class(last, k, &zero).unwrap_or_else(|| np_decision(last, k));
    Ok(Decision {
        predicted,
        hitting_time: len,
        forced,
    })
}

/// Class with the largest nonnegative rival margin, smallest index on ties.
fn crossing_class(m: &[f64], k: usize, thresholds: &ThresholdMatrix) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in 0..k {
        let margin = rival_margin(m, k, c, thresholds);
        if margin >= 0.0 && best.is_none_or(|(_, b)| margin > b) {
            best = Some((c, margin));
        }
    }
    best.map(|(c, _)| c)
}

fn np_decision(m: &[f64], k: usize) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..k {
        // min over l includes l = c, whose entry is 0
        let v = (0..k).map(|l| m[c * k + l]).fold(f64::INFINITY, f64::min);
        if v > best.1 {
            best = (c, v);
        }
    }
    best.0
}

/// Neyman-Pearson fixed-time rule `argmax_k min_l λ_kl` after `frames`
/// observed frames (`1..=T`). Ties go to the smallest class index.
pub fn np_test(llr: &LlrMatrixSeries, frames: usize) -> Result<usize> {
    if frames == 0 || frames > llr.len() {
        return invalid(format!("time {frames} outside 1..={}", llr.len()));
    }
    Ok(np_decision(llr.matrix(frames - 1), llr.num_classes()))
}

/// Upper bounds `e^{−a_kl}` on `α_kl`; the diagonal is reported as 1.
pub fn bound_matrix(thresholds: &ThresholdMatrix) -> Vec<f64> {
    let k = thresholds.num_classes();
    let mut out = vec![1.0; k * k];
    for a in 0..k {
        for b in 0..k {
            if a != b {
                out[a * k + b] = (-thresholds.get(a, b)).exp();
            }
        }
    }
    out
}

/// Bounds `Σ_{l≠k} e^{−a_kl}` on the row error `α_k`.
pub fn row_bounds(thresholds: &ThresholdMatrix) -> Vec<f64> {
    let k = thresholds.num_classes();
    let b = bound_matrix(thresholds);
    (0..k)
        .map(|r| (0..k).filter(|&c| c != r).map(|c| b[r * k + c]).sum())
        .collect()
}

/// Empirical error probabilities of a decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    classes: usize,
    /// `confusion[k*K + l]`: trials of class `k` decided as `l`.
    confusion: Vec<u64>,
    /// Weights `w_kl` for `β_l = Σ_k w_kl α_kl`.
    weights: Vec<f64>,
    hitting_time_sum: u64,
    hitting_time_sq_sum: u64,
}

impl ErrorStats {
    pub(crate) fn empty(classes: usize) -> Self {
        Self {
            classes,
            confusion: vec![0; classes * classes],
            weights: vec![1.0; classes * classes],
            hitting_time_sum: 0,
            hitting_time_sq_sum: 0,
        }
    }

    pub(crate) fn record(&mut self, label: usize, d: &Decision) {
        self.confusion[label * self.classes + d.predicted] += 1;
        let tau = d.hitting_time as u64;
        self.hitting_time_sum += tau;
        self.hitting_time_sq_sum += tau * tau;
    }

    pub(crate) fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            *a += b;
        }
        self.hitting_time_sum += other.hitting_time_sum;
        self.hitting_time_sq_sum += other.hitting_time_sq_sum;
        self
    }

    /// Tallies decisions against labels.
    pub fn from_decisions(decisions: &[Decision], labels: &Labels) -> Result<Self> {
        if decisions.len() != labels.len() {
            return invalid("decision and label counts differ");
        }
        let k = labels.num_classes();
        let mut s = Self::empty(k);
        for (d, &y) in decisions.iter().zip(labels.as_slice()) {
            if d.predicted >= k {
                return invalid(format!("decision {} out of range", d.predicted));
            }
            s.record(y, d);
        }
        Ok(s)
    }

    /// Replaces the `β_l` weights (default all ones).
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.classes * self.classes || weights.iter().any(|w| !w.is_finite()) {
            return invalid("weights must be a finite K x K matrix");
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn confusion(&self) -> &[u64] {
        &self.confusion
    }

    /// Number of trials whose true class is `k`.
    pub fn trials(&self, k: usize) -> u64 {
        self.confusion[k * self.classes..(k + 1) * self.classes].iter().sum()
    }

    pub fn total_trials(&self) -> u64 {
        self.confusion.iter().sum()
    }

    /// `α_kl = P_k(d = l)`; NaN when class `k` has no trials.
    pub fn alpha(&self, k: usize, l: usize) -> f64 {
        self.confusion[k * self.classes + l] as f64 / self.trials(k) as f64
    }

    /// Binomial standard error of [`alpha`](Self::alpha).
    pub fn alpha_se(&self, k: usize, l: usize) -> f64 {
        let a = self.alpha(k, l);
        (a * (1.0 - a) / self.trials(k) as f64).sqrt()
    }

    /// `α_k = Σ_{l≠k} α_kl`.
    pub fn alpha_row(&self, k: usize) -> f64 {
        (0..self.classes).filter(|&l| l != k).map(|l| self.alpha(k, l)).sum()
    }

    pub fn alpha_row_se(&self, k: usize) -> f64 {
        let a = self.alpha_row(k);
        (a * (1.0 - a) / self.trials(k) as f64).sqrt()
    }

    /// `β_l = Σ_{k≠l} w_kl α_kl`.
    pub fn beta(&self, l: usize) -> f64 {
        (0..self.classes)
            .filter(|&k| k != l)
            .map(|k| self.weights[k * self.classes + l] * self.alpha(k, l))
            .sum()
    }

    /// `1 − mean per-class recall`.
    pub fn balanced_error(&self) -> Result<f64> {
        let mut recall = 0.0;
        for k in 0..self.classes {
            if self.trials(k) == 0 {
                return Err(Error::EmptyClass(k));
            }
            recall += self.alpha(k, k);
        }
        Ok(1.0 - recall / self.classes as f64)
    }

    /// Standard error of the balanced error, `sqrt(Σ_k r_k(1−r_k)/n_k)/K`.
    pub fn balanced_error_se(&self) -> f64 {
        let v: f64 = (0..self.classes)
            .map(|k| {
                let r = self.alpha(k, k);
                r * (1.0 - r) / self.trials(k) as f64
            })
            .sum();
        v.sqrt() / self.classes as f64
    }

    pub fn mean_hitting_time(&self) -> f64 {
        self.hitting_time_sum as f64 / self.total_trials() as f64
    }

    /// Standard error of the mean hitting time.
    pub fn hitting_time_sem(&self) -> f64 {
        let n = self.total_trials() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.mean_hitting_time();
        let var = (self.hitting_time_sq_sum as f64 - n * mean * mean) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }
}

/// Monte Carlo error rates of the MSPRT on oracle LLRs. Trial `i` uses the
/// source's PRNG stream `i` under `seed`, so results do not depend on the
/// thread count.
pub fn estimate_errors_oracle(
    source: &GaussianSource,
    len: usize,
    thresholds: &ThresholdMatrix,
    trials: usize,
    seed: u64,
) -> Result<ErrorStats> {
    let k = source.num_classes();
    if thresholds.num_classes() != k {
        return invalid("threshold matrix size does not match the source");
    }
    if len == 0 || trials == 0 {
        return invalid("need at least one frame and one trial");
    }
    (0..trials as u64)
        .into_par_iter()
        .try_fold(
            || ErrorStats::empty(k),
            |mut acc, i| {
                let (label, frames) = source.sample_one(seed, i, len);
                let llr = source.true_llr(&frames)?;
                acc.record(label, &run_msprt(&llr, thresholds)?);
                Ok(acc)
            },
        )
        .try_reduce(|| ErrorStats::empty(k), |a, b| Ok(a.merge(b)))
}

/// Error rates of the MSPRT on given LLR series.
pub fn estimate_errors(
    llrs: &[LlrMatrixSeries],
    labels: &Labels,
    thresholds: &ThresholdMatrix,
) -> Result<ErrorStats> {
    let decisions = llrs
        .par_iter()
        .map(|s| run_msprt(s, thresholds))
        .collect::<Result<Vec<_>>>()?;
    ErrorStats::from_decisions(&decisions, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::antisymmetrize;
    use crate::domain::ScoreSeries;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Definition 1 transcribed per class: `τ_k`, then `τ* = min_k τ_k`.
    pub(crate) fn literal_msprt(llr: &LlrMatrixSeries, a: &ThresholdMatrix) -> Decision {
        let (len, k) = (llr.len(), llr.num_classes());
        let thr = |t: usize, l: usize, c: usize| if t == len - 1 { 0.0 } else { a.get(l, c) };
        let margin = |t: usize, c: usize| {
            (0..k)
                .filter(|&l| l != c)
                .map(|l| llr.get(t, c, l) - thr(t, l, c))
                .fold(f64::INFINITY, f64::min)
        };
        let tau: Vec<Option<usize>> = (0..k).map(|c| (0..len).find(|&t| margin(t, c) >= 0.0)).collect();
        let first = tau.iter().flatten().min().copied();
        let crossed_original = (0..len).any(|t| {
            (0..k).any(|c| {
                (0..k)
                    .filter(|&l| l != c)
                    .all(|l| llr.get(t, c, l) - a.get(l, c) >= 0.0)
            })
        });
        match first {
            Some(t) => {
                let mut best = usize::MAX;
                for c in 0..k {
                    if tau[c] == Some(t) && (best == usize::MAX || margin(t, c) > margin(t, best)) {
                        best = c;
                    }
                }
                Decision {
                    predicted: best,
                    hitting_time: t + 1,
                    forced: !crossed_original,
                }
            }
            None => Decision {
                predicted: brute_np(llr, len),
                hitting_time: len,
                forced: true,
            },
        }
    }

    fn brute_np(llr: &LlrMatrixSeries, frames: usize) -> usize {
        let k = llr.num_classes();
        let score = |c: usize| (0..k).map(|l| llr.get(frames - 1, c, l)).fold(f64::INFINITY, f64::min);
        let mut best = 0;
        for c in 1..k {
            if score(c) > score(best) {
                best = c;
            }
        }
        best
    }

    fn random_series(rng: &mut ChaCha8Rng, len: usize, k: usize, additive: bool) -> LlrMatrixSeries {
        if additive {
            let mut acc = vec![0.0; k];
            let mut scores = Vec::with_capacity(len * k);
            for _ in 0..len {
                for a in acc.iter_mut() {
                    *a += rng.random_range(-1.5..1.5);
                }
                scores.extend_from_slice(&acc);
            }
            ScoreSeries::new(scores, len, k).unwrap().to_llr()
        } else {
            let raw: Vec<f64> = (0..len * k * k).map(|_| rng.random_range(-6.0..6.0)).collect();
            antisymmetrize(&raw, len, k).unwrap()
        }
    }

    #[test]
    fn zero_thresholds_stop_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = random_series(&mut rng, 6, 3, true);
            let d = run_msprt(&s, &ThresholdMatrix::scalar(3, 0.0).unwrap()).unwrap();
            assert_eq!(d.hitting_time, 1);
            assert!(!d.forced);
            assert_eq!(d.predicted, np_test(&s, 1).unwrap());
        }
    }

    #[test]
    fn huge_thresholds_force_np_at_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for additive in [true, false] {
            for _ in 0..100 {
                let s = random_series(&mut rng, 7, 4, additive);
                let d = run_msprt(&s, &ThresholdMatrix::scalar(4, 1e18).unwrap()).unwrap();
                assert_eq!(d.hitting_time, 7);
                assert!(d.forced);
                assert_eq!(d.predicted, np_test(&s, 7).unwrap());
            }
        }
    }

    #[test]
    fn matches_literal_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &k in &[2usize, 3, 5] {
            for i in 0..2000 {
                let s = random_series(&mut rng, 8, k, i % 2 == 0);
                let a = ThresholdMatrix::scalar(k, 2.0).unwrap();
                assert_eq!(run_msprt(&s, &a).unwrap(), literal_msprt(&s, &a));
                let raw: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..5.0)).collect();
                let a = ThresholdMatrix::from_matrix(k, raw).unwrap();
                assert_eq!(run_msprt(&s, &a).unwrap(), literal_msprt(&s, &a));
            }
        }
    }

    #[test]
    fn np_examples() {
        let s = LlrMatrixSeries::zeros(3, 4);
        assert_eq!(np_test(&s, 2).unwrap(), 0);
        let two = |x: f64| LlrMatrixSeries::new(vec![0.0, x, -x, 0.0], 1, 2).unwrap();
        assert_eq!(np_test(&two(0.3), 1).unwrap(), 0);
        assert_eq!(np_test(&two(-0.3), 1).unwrap(), 1);
        assert!(np_test(&two(1.0), 0).is_err());
        assert!(np_test(&two(1.0), 2).is_err());
    }

    #[test]
    fn np_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let s = random_series(&mut rng, 3, 5, false);
            for t in 1..=3 {
                assert_eq!(np_test(&s, t).unwrap(), brute_np(&s, t));
            }
        }
    }

    /// Classical two-sided SPRT on `λ_01`: stop at `λ ≥ a` or `λ ≤ −a`.
    fn binary_sprt(lam: &[f64], a: f64) -> Decision {
        let len = lam.len();
        for (t, &x) in lam.iter().enumerate() {
            if x >= a || x <= -a {
                return Decision {
                    predicted: usize::from(x < 0.0),
                    hitting_time: t + 1,
                    forced: false,
                };
            }
        }
        let x = lam[len - 1];
        Decision {
            predicted: usize::from(x < 0.0),
            hitting_time: len,
            forced: true,
        }
    }

    #[test]
    fn binary_case_is_the_classical_sprt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let s = random_series(&mut rng, 10, 2, true);
            let a = rng.random_range(0.1..6.0);
            let lam: Vec<f64> = (0..10).map(|t| s.get(t, 0, 1)).collect();
            assert_eq!(
                run_msprt(&s, &ThresholdMatrix::scalar(2, a).unwrap()).unwrap(),
                binary_sprt(&lam, a)
            );
        }
    }

    #[test]
    fn stopping_class_is_unique_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let s = random_series(&mut rng, 6, 4, false);
            let a = ThresholdMatrix::scalar(4, 1.0).unwrap();
            let d = run_msprt(&s, &a).unwrap();
            if d.forced {
                continue;
            }
            let t = d.hitting_time - 1;
            let crossers = (0..4)
                .filter(|&c| crate::domain::min_rival_margin(&s, t, c, &a).unwrap() >= 0.0)
                .count();
            assert_eq!(crossers, 1);
        }
    }

    #[test]
    fn bound_matrix_values() {
        let b = bound_matrix(&ThresholdMatrix::scalar(3, 100f64.ln()).unwrap());
        assert!((b[1] - 0.01).abs() < 1e-15);
        assert_eq!(b[0], 1.0);
        let z = bound_matrix(&ThresholdMatrix::scalar(2, 0.0).unwrap());
        assert_eq!(z, vec![1.0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..4.0)).collect();
        let a = ThresholdMatrix::from_matrix(3, raw).unwrap();
        let rows = row_bounds(&a);
        for k in 0..3 {
            let direct: f64 = (0..3).filter(|&l| l != k).map(|l| (-a.get(k, l)).exp()).sum();
            assert!((rows[k] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_threshold_errors_equal_np_at_one() {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let zero = ThresholdMatrix::scalar(3, 0.0).unwrap();
        let stats = estimate_errors_oracle(&src, 5, &zero, 3000, 9).unwrap();
        let mut np = ErrorStats::empty(3);
        for i in 0..3000 {
            let (y, frames) = src.sample_one(9, i, 5);
            let llr = src.true_llr(&frames).unwrap();
            np.record(
                y,
                &Decision {
                    predicted: np_test(&llr, 1).unwrap(),
                    hitting_time: 1,
                    forced: false,
                },
            );
        }
        assert_eq!(stats.confusion(), np.confusion());
        for k in 0..3 {
            assert_eq!(stats.alpha_row(k), np.alpha_row(k));
        }
        assert_eq!(stats.mean_hitting_time(), 1.0);
    }

    #[test]
    fn errors_shrink_with_threshold() {
        let src = GaussianSource::ring(3, 2, 2.0, 1.0).unwrap();
        let rates: Vec<f64> = [1.0f64, 3.0, 6.0]
            .iter()
            .map(|&a| {
                let s = estimate_errors_oracle(&src, 60, &ThresholdMatrix::scalar(3, a).unwrap(), 4000, 11)
                    .unwrap();
                (0..3).map(|k| s.alpha_row(k)).sum::<f64>()
            })
            .collect();
        assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
    }

    #[test]
    fn estimate_is_deterministic() {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let a = ThresholdMatrix::scalar(3, 2.0).unwrap();
        let x = estimate_errors_oracle(&src, 20, &a, 500, 3).unwrap();
        let y = estimate_errors_oracle(&src, 20, &a, 500, 3).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn stats_accessors() {
        let labels = Labels::new(vec![0, 0, 1, 1], 2).unwrap();
        let d = |p, t| Decision {
            predicted: p,
            hitting_time: t,
            forced: false,
        };
        let s = ErrorStats::from_decisions(&[d(0, 1), d(1, 3), d(1, 2), d(1, 2)], &labels).unwrap();
        assert_eq!(s.alpha(0, 1), 0.5);
        assert_eq!(s.alpha_row(1), 0.0);
        assert_eq!(s.balanced_error().unwrap(), 0.25);
        assert_eq!(s.mean_hitting_time(), 2.0);
        assert_eq!(s.beta(1), 0.5);
        let w = s.clone().with_weights(vec![0.0, 2.0, 1.0, 0.0]).unwrap();
        assert_eq!(w.beta(1), 1.0);
    }

    proptest! {
        #[test]
        fn hitting_time_monotone_in_threshold(seed in 0u64..10_000, lo in 0.0f64..4.0, gap in 0.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_series(&mut rng, 12, 3, seed % 2 == 0);
            let a = run_msprt(&s, &ThresholdMatrix::scalar(3, lo).unwrap()).unwrap();
            let b = run_msprt(&s, &ThresholdMatrix::scalar(3, lo + gap).unwrap()).unwrap();
            prop_assert!(b.hitting_time >= a.hitting_time);
        }
    }
}
