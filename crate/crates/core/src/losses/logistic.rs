//! Pairwise logistic losses over the LLR matrix.

use super::{check_batch, LossOutput};
use crate::domain::{ClassPriorStats, CostMatrix, Labels, LlrMatrixSeries};
use crate::error::{invalid, Error, Result};
use crate::numeric::{sigmoid, softplus};

/// Weighting scheme for [`logistic_family`].
#[derive(Debug, Clone, Copy)]
pub enum LogisticMode<'a> {
    /// Class-balanced: `(1/K) Σ_k (1/M_k) Σ_{I_k}`.
    Plain,
    /// Prior ratio inside the logarithm, `log(1 + (M_l/M_y) e^{−λ̂_yl})`.
    Prior(&'a ClassPriorStats),
    /// Cost outside the logarithm, `C_yl softplus(−λ̂_yl)`.
    CostOuter(&'a CostMatrix),
    /// Cost inside the logarithm, `log(1 + C_yl e^{−λ̂_yl})`.
    CostInner(&'a CostMatrix),
}

/// Averages `1/(K−1) Σ_{l≠y} term(y, l, λ̂_yl)` over samples and time, with
/// the normalization set by `mode`.
pub fn logistic_family(
    llrs: &[LlrMatrixSeries],
    labels: &Labels,
    mode: LogisticMode<'_>,
) -> Result<LossOutput> {
    let (len, k) = check_batch(llrs, labels)?;
    if k < 2 {
        return invalid("logistic losses need at least two classes");
    }
    match mode {
        LogisticMode::Prior(p) if p.num_classes() != k => {
            return invalid("prior statistics class count mismatch")
        }
        LogisticMode::CostOuter(c) | LogisticMode::CostInner(c) if c.num_classes() != k => {
            return invalid("cost matrix class count mismatch")
        }
        _ => {}
    }
    let present = labels.present_classes().count();
    let pair = 1.0 / (k - 1) as f64;
    let mut gradient = vec![0.0; llrs.len() * len * k * k];
    let mut value = 0.0;
    for (i, (series, &y)) in llrs.iter().zip(labels.as_slice()).enumerate() {
        let sample_scale = match mode {
            LogisticMode::Plain => 1.0 / (present * len * labels.count(y)) as f64,
            _ => 1.0 / (llrs.len() * len) as f64,
        };
        let log_my = match mode {
            LogisticMode::Prior(p) => Some(p.log_count(y).ok_or(Error::EmptyClass(y))?),
            _ => None,
        };
        for t in 0..len {
            let base = (i * len + t) * k * k + y * k;
            for l in (0..k).filter(|&l| l != y) {
                let x = series.get(t, y, l);
                // (weight outside, log-weight inside); None drops the term
                let (outer, inner) = match mode {
                    LogisticMode::Plain => (1.0, Some(0.0)),
                    LogisticMode::Prior(p) => (1.0, p.log_count(l).map(|lm| lm - log_my.unwrap())),
                    LogisticMode::CostOuter(c) => (c.get(y, l), Some(0.0)),
                    LogisticMode::CostInner(c) => {
                        let w = c.get(y, l);
                        (1.0, (w > 0.0).then(|| w.ln()))
                    }
                };
                let Some(shift) = inner else { continue };
                let scale = sample_scale * pair * outer;
                value += scale * softplus(shift - x);
                gradient[base + l] -= scale * sigmoid(shift - x);
            }
        }
    }
    Ok(LossOutput { value, gradient })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    fn naive(
        llrs: &[LlrMatrixSeries],
        labels: &Labels,
        w_out: &dyn Fn(usize, usize) -> f64,
        w_in: &dyn Fn(usize, usize) -> f64,
        per_sample: &dyn Fn(usize) -> f64,
    ) -> f64 {
        let k = labels.num_classes();
        let mut total = 0.0;
        for (s, &y) in llrs.iter().zip(labels.as_slice()) {
            for t in 0..s.len() {
                for l in (0..k).filter(|&l| l != y) {
                    let inner = 1.0 + w_in(y, l) * (-s.get(t, y, l)).exp();
                    total += per_sample(y) * w_out(y, l) * inner.ln() / (k - 1) as f64;
                }
            }
        }
        total
    }

    #[test]
    fn plain_matches_naive() {
        let (llrs, labels) = random_batch(10, 3, 4, 2.0, 11);
        let counts = labels.counts();
        let expected = naive(&llrs, &labels, &|_, _| 1.0, &|_, _| 1.0, &|y| {
            1.0 / (4.0 * 3.0 * counts[y] as f64)
        });
        let got = logistic_family(&llrs, &labels, LogisticMode::Plain).unwrap().value;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn prior_mode_matches_naive() {
        let (llrs, labels) = random_batch(10, 3, 3, 2.0, 12);
        let counts = labels.counts();
        let expected = naive(
            &llrs,
            &labels,
            &|_, _| 1.0,
            &|y, l| counts[l] as f64 / counts[y] as f64,
            &|_| 1.0 / 30.0,
        );
        let priors = ClassPriorStats::from_labels(&labels);
        let got = logistic_family(&llrs, &labels, LogisticMode::Prior(&priors)).unwrap().value;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn cost_modes_match_naive() {
        let (llrs, labels) = random_batch(8, 2, 3, 1.5, 13);
        let c = CostMatrix::new(3, vec![0.0, 0.5, 2.0, 1.5, 0.0, 0.3, 1.0, 0.7, 0.0]).unwrap();
        let outer = naive(&llrs, &labels, &|y, l| c.get(y, l), &|_, _| 1.0, &|_| 1.0 / 16.0);
        let inner = naive(&llrs, &labels, &|_, _| 1.0, &|y, l| c.get(y, l), &|_| 1.0 / 16.0);
        let a = logistic_family(&llrs, &labels, LogisticMode::CostOuter(&c)).unwrap().value;
        let b = logistic_family(&llrs, &labels, LogisticMode::CostInner(&c)).unwrap().value;
        assert!((a - outer).abs() < 1e-12);
        assert!((b - inner).abs() < 1e-12);
    }

    #[test]
    fn cost_outer_reduces_to_plain_with_balancing_costs() {
        let (llrs, labels) = random_batch(13, 4, 3, 2.0, 14);
        let m = labels.len() as f64;
        let row: Vec<f64> = labels.counts().iter().map(|&mk| m / (3.0 * mk as f64)).collect();
        let c = CostMatrix::row_constant(&row).unwrap();
        let a = logistic_family(&llrs, &labels, LogisticMode::CostOuter(&c)).unwrap();
        let b = logistic_family(&llrs, &labels, LogisticMode::Plain).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        assert!(relative_error(&a.gradient, &b.gradient) < 1e-12);
    }

    #[test]
    fn cost_inner_reduces_to_prior_mode() {
        let (llrs, labels) = random_batch(9, 3, 4, 2.0, 15);
        let priors = ClassPriorStats::from_labels(&labels);
        let c = CostMatrix::inverse_prior_ratio(&priors).unwrap();
        let a = logistic_family(&llrs, &labels, LogisticMode::CostInner(&c)).unwrap();
        let b = logistic_family(&llrs, &labels, LogisticMode::Prior(&priors)).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        assert!(relative_error(&a.gradient, &b.gradient) < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (llrs, labels) = random_batch(7, 3, 3, 2.0, 16);
        let priors = ClassPriorStats::from_labels(&labels);
        let c = CostMatrix::new(3, vec![0.0, 0.5, 2.0, 1.5, 0.0, 0.3, 1.0, 0.7, 0.0]).unwrap();
        let modes = [
            LogisticMode::Plain,
            LogisticMode::Prior(&priors),
            LogisticMode::CostOuter(&c),
            LogisticMode::CostInner(&c),
        ];
        for mode in modes {
            let analytic = logistic_family(&llrs, &labels, mode).unwrap().gradient;
            let err = fd_relative_error(&llrs, &analytic, |x| {
                logistic_family(x, &labels, mode).unwrap().value
            });
            assert!(err < 1e-5, "{mode:?}: {err}");
        }
    }
}
