//! Metrics, speed-accuracy curves and Monte Carlo experiment harnesses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Decision, Labels, LlrMatrixSeries, SequenceBatch, ThresholdMatrix};
use crate::error::{invalid, Error, Result};
use crate::losses::LlrLossKind;
use crate::model::{train, LlrEstimator, TrainConfig, TrainRun, TrainedModel, TraceRow};
use crate::msprt::{np_test, run_msprt, ErrorStats};
use crate::numeric::{linspace, mean_and_sem, median};
use crate::oracle::GaussianSource;

/// `1 − (1/K) Σ_k recall_k`. Every class must occur in `labels`.
pub fn balanced_error(decisions: &[Decision], labels: &Labels) -> Result<f64> {
    ErrorStats::from_decisions(decisions, labels)?.balanced_error()
}

/// Mean stopping time and its standard error.
pub fn mean_hitting_time(decisions: &[Decision]) -> Result<(f64, f64)> {
    if decisions.is_empty() {
        return invalid("no decisions");
    }
    let taus: Vec<f64> = decisions.iter().map(|d| d.hitting_time as f64).collect();
    Ok(mean_and_sem(&taus))
}

/// Estimated LLR series for every sequence of a batch.
pub fn estimate_all<E: LlrEstimator + ?Sized>(
    estimator: &E,
    batch: &SequenceBatch,
) -> Result<Vec<LlrMatrixSeries>> {
    if estimator.num_classes() != batch.num_classes() {
        return invalid("estimator and data disagree on the class count");
    }
    (0..batch.num_sequences())
        .into_par_iter()
        .map(|i| estimator.estimate_llr(batch.sequence(i)))
        .collect()
}

/// Balanced error of the NP test after `frames` observations.
pub fn np_balanced_error(llrs: &[LlrMatrixSeries], labels: &Labels, frames: usize) -> Result<f64> {
    let decisions = llrs
        .iter()
        .map(|s| {
            Ok(Decision {
                predicted: np_test(s, frames)?,
                hitting_time: frames,
                forced: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    balanced_error(&decisions, labels)
}

/// One threshold of a speed-accuracy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatPoint {
    pub threshold: f64,
    pub mean_hitting_time: f64,
    pub balanced_error: f64,
    pub sem_mht: f64,
    pub sem_err: f64,
}

/// Speed-accuracy tradeoff curve, sorted by mean hitting time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatCurve {
    pub points: Vec<SatPoint>,
}

impl SatCurve {
    /// Error at a given mean hitting time, linear between neighbouring
    /// points. `None` outside the covered range.
    pub fn interpolate(&self, mht: f64) -> Option<f64> {
        let p = &self.points;
        if p.is_empty() || mht < p[0].mean_hitting_time || mht > p[p.len() - 1].mean_hitting_time {
            return None;
        }
        for pair in p.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if mht <= b.mean_hitting_time {
                let span = b.mean_hitting_time - a.mean_hitting_time;
                if span <= 0.0 {
                    return Some(a.balanced_error.min(b.balanced_error));
                }
                let u = (mht - a.mean_hitting_time) / span;
                return Some(a.balanced_error + u * (b.balanced_error - a.balanced_error));
            }
        }
        Some(p[p.len() - 1].balanced_error)
    }

    /// Adjacent pairs whose error rises as the hitting time grows.
    pub fn monotonicity_violations(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| w[1].balanced_error > w[0].balanced_error)
            .count()
    }
}

/// Runs the MSPRT at one scalar threshold over a labelled set.
pub fn sat_point(llrs: &[LlrMatrixSeries], labels: &Labels, threshold: f64) -> Result<SatPoint> {
    let k = labels.num_classes();
    let a = ThresholdMatrix::scalar(k, threshold)?;
    let decisions = llrs
        .iter()
        .map(|s| run_msprt(s, &a))
        .collect::<Result<Vec<_>>>()?;
    let stats = ErrorStats::from_decisions(&decisions, labels)?;
    let (mht, sem_mht) = mean_hitting_time(&decisions)?;
    Ok(SatPoint {
        threshold,
        mean_hitting_time: mht,
        balanced_error: stats.balanced_error()?,
        sem_mht,
        sem_err: stats.balanced_error_se(),
    })
}

/// Sweep range: smallest strictly positive and largest `|λ̂|` over all
/// entries. The top is nudged one ulp up so that nothing crosses it before
/// the forced decision at `T`.
pub fn sweep_range(llrs: &[LlrMatrixSeries]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for v in llrs.iter().flat_map(|s| s.values()) {
        let a = v.abs();
        if !a.is_finite() {
            return invalid("non-finite LLR entry");
        }
        if a > 0.0 {
            lo = lo.min(a);
            hi = hi.max(a);
        }
    }
    if !lo.is_finite() || hi <= lo {
        return Err(Error::DegenerateInput(
            "LLR magnitudes are constant; nothing to sweep".into(),
        ));
    }
    Ok((lo, hi.next_up()))
}

/// Speed-accuracy curve over `n_thresholds` linearly spaced thresholds.
pub fn sat_curve(llrs: &[LlrMatrixSeries], labels: &Labels, n_thresholds: usize) -> Result<SatCurve> {
    if n_thresholds < 2 {
        return invalid("need at least two thresholds");
    }
    if llrs.len() != labels.len() {
        return invalid("LLR and label counts differ");
    }
    let (lo, hi) = sweep_range(llrs)?;
    let mut points = linspace(lo, hi, n_thresholds)
        .into_par_iter()
        .map(|a| sat_point(llrs, labels, a))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.mean_hitting_time
            .total_cmp(&b.mean_hitting_time)
            .then(a.threshold.total_cmp(&b.threshold))
    });
    Ok(SatCurve { points })
}

/// Held-out mean squared error between estimated and true LLRs over all
/// off-diagonal entries, with the per-`(t, k, l)` breakdown.
pub fn llr_mse<E: LlrEstimator + ?Sized>(
    estimator: &E,
    source: &GaussianSource,
    heldout: &SequenceBatch,
) -> Result<(f64, Vec<f64>)> {
    let est = estimate_all(estimator, heldout)?;
    let (len, k) = (heldout.len(), heldout.num_classes());
    let per: Vec<Vec<f64>> = (0..heldout.num_sequences())
        .into_par_iter()
        .map(|i| {
            let truth = source.true_llr(heldout.sequence(i))?;
            Ok(est[i]
                .values()
                .iter()
                .zip(truth.values())
                .map(|(a, b)| (a - b) * (a - b))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut breakdown = vec![0.0; len * k * k];
    for row in &per {
        for (acc, v) in breakdown.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let m = heldout.num_sequences() as f64;
    breakdown.iter_mut().for_each(|v| *v /= m);
    let off_diag = (0..len * k * k).filter(|&j| (j / k) % k != j % k);
    let count = len * k * (k - 1);
    let mse = off_diag.map(|j| breakdown[j]).sum::<f64>() / count as f64;
    Ok((mse, breakdown))
}

/// One `(M, seed)` cell of a consistency probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub sample_size: usize,
    pub seed: u64,
    /// `None` when training diverged.
    pub mse: Option<f64>,
    pub breakdown: Vec<f64>,
    pub divergence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    /// Median MSE over the finished seeds of one sample size.
    pub fn median_mse(&self, sample_size: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.sample_size == sample_size)
            .filter_map(|r| r.mse)
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }
}

/// Trains one model per `(M, seed)` and reports the held-out LLR error. Cell
/// `(M, s)` draws its training set from stream `s` and trains with seed `s`;
/// the held-out set is shared.
pub fn consistency_probe(
    cfg: &TrainConfig,
    source: &GaussianSource,
    len: usize,
    sample_sizes: &[usize],
    seeds: &[u64],
    heldout: &SequenceBatch,
) -> Result<ConsistencyReport> {
    if sample_sizes.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("sample sizes must be strictly increasing");
    }
    let cells: Vec<(usize, u64)> = sample_sizes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(m, seed)| {
            let data = source.sample_sequences(m, len, seed)?;
            let run = train(&TrainConfig { seed, ..*cfg }, &data)?;
            if let Some(e) = run.divergence {
                return Ok(ConsistencyRow {
                    sample_size: m,
                    seed,
                    mse: None,
                    breakdown: Vec::new(),
                    divergence: Some(e.to_string()),
                });
            }
            let model = trained_model(cfg, run, &data);
            let (mse, breakdown) = llr_mse(&model, source, heldout)?;
            Ok(ConsistencyRow {
                sample_size: m,
                seed,
                mse: Some(mse),
                breakdown,
                divergence: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport { rows })
}

/// Wraps a finished run for inference.
pub fn trained_model(cfg: &TrainConfig, run: TrainRun, data: &SequenceBatch) -> TrainedModel {
    TrainedModel {
        params: run.params,
        tandem: cfg.tandem(),
        priors: Some(crate::domain::ClassPriorStats::from_labels(data.labels())),
    }
}

/// MSPRT performance at one threshold against NP tests at every fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityRow {
    pub threshold: f64,
    pub mean_hitting_time: f64,
    pub sem_hitting_time: f64,
    pub balanced_error: f64,
    pub sem_error: f64,
    /// Smallest fixed time whose NP error does not exceed the MSPRT error.
    pub matched_np_time: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityTable {
    pub rows: Vec<OptimalityRow>,
    /// `(balanced error, standard error)` of the NP test at `t = 1..=T`.
    pub np_errors: Vec<(f64, f64)>,
}

impl OptimalityTable {
    /// Smallest `t` with `NP_err(t) ≤ err + slack`.
    pub fn first_np_time_within(&self, err: f64, slack: impl Fn(f64) -> f64) -> Option<usize> {
        self.np_errors
            .iter()
            .position(|&(e, se)| e <= err + slack(se))
            .map(|i| i + 1)
    }
}

#[derive(Clone)]
struct OptimalityAcc {
    msprt: Vec<ErrorStats>,
    np: Vec<ErrorStats>,
}

/// Oracle Monte Carlo comparing the MSPRT at each threshold with the NP test
/// at every fixed time, all on the same trials.
pub fn optimality_comparison(
    source: &GaussianSource,
    len: usize,
    thresholds: &[f64],
    trials: usize,
    seed: u64,
) -> Result<OptimalityTable> {
    let k = source.num_classes();
    if len == 0 || trials == 0 || thresholds.is_empty() {
        return invalid("need frames, trials and thresholds");
    }
    let mats = thresholds
        .iter()
        .map(|&a| ThresholdMatrix::scalar(k, a))
        .collect::<Result<Vec<_>>>()?;
    let empty = || OptimalityAcc {
        msprt: vec![ErrorStats::empty(k); thresholds.len()],
        np: vec![ErrorStats::empty(k); len],
    };
    let merge = |a: OptimalityAcc, b: OptimalityAcc| -> Result<OptimalityAcc> {
        Ok(OptimalityAcc {
            msprt: a.msprt.into_iter().zip(b.msprt).map(|(x, y)| x.merge(y)).collect(),
            np: a.np.into_iter().zip(b.np).map(|(x, y)| x.merge(y)).collect(),
        })
    };
    let acc = (0..trials as u64)
        .into_par_iter()
        .try_fold(empty, |mut acc, i| {
            let (y, frames) = source.sample_one(seed, i, len);
            let llr = source.true_llr(&frames)?;
            for (stats, a) in acc.msprt.iter_mut().zip(&mats) {
                stats.record(y, &run_msprt(&llr, a)?);
            }
            for (t, stats) in acc.np.iter_mut().enumerate() {
                let d = Decision {
                    predicted: np_test(&llr, t + 1)?,
                    hitting_time: t + 1,
                    forced: false,
                };
                stats.record(y, &d);
            }
            Ok(acc)
        })
        .try_reduce(empty, merge)?;
    let np_errors = acc
        .np
        .iter()
        .map(|s| Ok((s.balanced_error()?, s.balanced_error_se())))
        .collect::<Result<Vec<_>>>()?;
    let mut table = OptimalityTable {
        rows: Vec::new(),
        np_errors,
    };
    for (&a, s) in thresholds.iter().zip(&acc.msprt) {
        let err = s.balanced_error()?;
        table.rows.push(OptimalityRow {
            threshold: a,
            mean_hitting_time: s.mean_hitting_time(),
            sem_hitting_time: s.hitting_time_sem(),
            balanced_error: err,
            sem_error: s.balanced_error_se(),
            matched_np_time: table.first_np_time_within(err, |_| 0.0),
        });
    }
    Ok(table)
}

/// Synthetic benchmark: a Gaussian source with fixed sequence length and
/// train/validation sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub source: GaussianSource,
    pub len: usize,
    pub train_size: usize,
    pub valid_size: usize,
    /// Stream for the validation set; training sets use the run seed.
    pub valid_seed: u64,
}

impl SyntheticTask {
    /// Three classes on a unit-side triangle in two dimensions with unit
    /// noise (0.5 nats of pairwise information per frame), `T = 10`.
    pub fn standard() -> Self {
        Self {
            source: GaussianSource::ring(3, 2, 1.0, 1.0).expect("valid ring"),
            len: 10,
            train_size: 2000,
            valid_size: 2000,
            valid_seed: 1_000_003,
        }
    }

    pub fn validation(&self) -> Result<SequenceBatch> {
        self.source.sample_sequences(self.valid_size, self.len, self.valid_seed)
    }

    pub fn training(&self, seed: u64) -> Result<SequenceBatch> {
        self.source.sample_sequences(self.train_size, self.len, seed)
    }
}

/// Result of one `(loss, seed)` training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRun {
    pub loss: LlrLossKind,
    pub seed: u64,
    pub trace: Vec<TraceRow>,
    /// NP-at-`T` balanced error on validation data; chance level
    /// `1 − 1/K` when training diverged.
    pub final_error: f64,
    pub divergence: Option<String>,
    /// Validation SAT curve; `None` for diverged or degenerate runs.
    pub curve: Option<SatCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub loss: LlrLossKind,
    pub median_error: f64,
    pub diverged_runs: usize,
    /// Mean of the interpolated curve errors at the shared hitting-time grid.
    pub mean_curve_error: Option<f64>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossComparison {
    pub runs: Vec<LossRun>,
    pub summary: Vec<LossSummary>,
    /// Hitting times at which curves are compared.
    pub grid: Vec<f64>,
}

impl LossComparison {
    pub fn summary_for(&self, name: &str) -> Option<&LossSummary> {
        self.summary.iter().find(|s| s.loss.name() == name)
    }
}

/// Trains one model per `(loss, seed)` and compares validation errors.
/// Losses are ranked by median final error, ties broken by the mean curve
/// error on a shared grid of hitting times.
pub fn compare_losses(
    task: &SyntheticTask,
    base: &TrainConfig,
    losses: &[LlrLossKind],
    seeds: &[u64],
    n_thresholds: usize,
) -> Result<LossComparison> {
    if losses.is_empty() || seeds.is_empty() {
        return invalid("need at least one loss and one seed");
    }
    let valid = task.validation()?;
    let k = task.source.num_classes();
    let chance = 1.0 - 1.0 / k as f64;
    let cells: Vec<(LlrLossKind, u64)> = losses
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let runs = cells
        .into_par_iter()
        .map(|(loss, seed)| {
            let data = task.training(seed)?;
            let cfg = TrainConfig {
                seed,
                llr_loss: loss,
                ..*base
            };
            let run = train(&cfg, &data)?;
            let trace = run.trace.clone();
            if let Some(e) = run.divergence {
                return Ok(LossRun {
                    loss,
                    seed,
                    trace,
                    final_error: chance,
                    divergence: Some(e.to_string()),
                    curve: None,
                });
            }
            let model = trained_model(&cfg, run, &data);
            let llrs = estimate_all(&model, &valid)?;
            let final_error = np_balanced_error(&llrs, valid.labels(), task.len)?;
            let curve = match sat_curve(&llrs, valid.labels(), n_thresholds) {
                Ok(c) => Some(c),
                Err(Error::DegenerateInput(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(LossRun {
                loss,
                seed,
                trace,
                final_error,
                divergence: None,
                curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let grid: Vec<f64> = linspace(1.0, task.len as f64, task.len.max(2));
    let mut summary: Vec<LossSummary> = losses
        .iter()
        .map(|&loss| {
            let mine: Vec<&LossRun> = runs.iter().filter(|r| r.loss == loss).collect();
            let errors: Vec<f64> = mine.iter().map(|r| r.final_error).collect();
            let curve_errs: Vec<f64> = mine
                .iter()
                .filter_map(|r| r.curve.as_ref())
                .flat_map(|c| grid.iter().filter_map(|&g| c.interpolate(g)))
                .collect();
            LossSummary {
                loss,
                median_error: median(&errors),
                diverged_runs: mine.iter().filter(|r| r.divergence.is_some()).count(),
                mean_curve_error: (!curve_errs.is_empty())
                    .then(|| curve_errs.iter().sum::<f64>() / curve_errs.len() as f64),
                rank: 0,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..summary.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&summary[a], &summary[b]);
        x.median_error
            .total_cmp(&y.median_error)
            .then(
                x.mean_curve_error
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&y.mean_curve_error.unwrap_or(f64::INFINITY)),
            )
            .then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        summary[i].rank = rank + 1;
    }
    Ok(LossComparison {
        runs,
        summary,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScoreSeries;
    use crate::model::OraclePosteriorModel;
    use crate::tandem::{TandemConfig, TandemFormula};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dec(p: usize, t: usize) -> Decision {
        Decision {
            predicted: p,
            hitting_time: t,
            forced: false,
        }
    }

    #[test]
    fn balanced_error_examples() {
        let labels = Labels::new(vec![0, 0, 1, 1, 1], 2).unwrap();
        let all = [dec(0, 1), dec(0, 1), dec(1, 1), dec(1, 1), dec(1, 1)];
        assert_eq!(balanced_error(&all, &labels).unwrap(), 0.0);
        let half = [dec(0, 1), dec(0, 1), dec(0, 1), dec(0, 1), dec(0, 1)];
        assert_eq!(balanced_error(&half, &labels).unwrap(), 0.5);
        let missing = Labels::new(vec![0, 0], 2).unwrap();
        assert!(matches!(
            balanced_error(&[dec(0, 1), dec(0, 1)], &missing),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn balanced_error_matches_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let k = rng.random_range(2..6);
            let n = rng.random_range(k..40);
            let y: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
            let d: Vec<Decision> = (0..n).map(|_| dec(rng.random_range(0..k), 1)).collect();
            let mut recall = 0.0;
            for c in 0..k {
                let idx: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
                let hit = idx.iter().filter(|&&i| d[i].predicted == c).count();
                recall += hit as f64 / idx.len() as f64;
            }
            let expected = 1.0 - recall / k as f64;
            let got = balanced_error(&d, &Labels::new(y, k).unwrap()).unwrap();
            assert!((got - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn hitting_time_examples() {
        assert_eq!(mean_hitting_time(&[dec(0, 1), dec(0, 1)]).unwrap(), (1.0, 0.0));
        assert_eq!(mean_hitting_time(&[dec(0, 1), dec(0, 3)]).unwrap().0, 2.0);
        assert!(mean_hitting_time(&[]).is_err());
    }

    fn oracle_set(n: usize, len: usize, seed: u64) -> (Vec<LlrMatrixSeries>, Labels) {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let data = src.sample_sequences(n, len, seed).unwrap();
        (estimate_all(&src, &data).unwrap(), data.labels().clone())
    }

    #[test]
    fn sat_curve_endpoints_reduce_to_np() {
        let (llrs, labels) = oracle_set(600, 12, 2);
        let curve = sat_curve(&llrs, &labels, 20).unwrap();
        assert_eq!(curve.points.len(), 20);
        let last = curve.points.last().unwrap();
        assert_eq!(last.mean_hitting_time, 12.0);
        assert_eq!(last.balanced_error, np_balanced_error(&llrs, &labels, 12).unwrap());
        let zero = sat_point(&llrs, &labels, 0.0).unwrap();
        assert_eq!(zero.mean_hitting_time, 1.0);
        assert_eq!(zero.balanced_error, np_balanced_error(&llrs, &labels, 1).unwrap());
        for w in curve.points.windows(2) {
            assert!(w[0].mean_hitting_time <= w[1].mean_hitting_time);
        }
        assert!(curve.points.iter().all(|p| (1.0..=12.0).contains(&p.mean_hitting_time)));
    }

    #[test]
    fn sat_curve_is_nearly_monotone_on_oracle_llrs() {
        let (llrs, labels) = oracle_set(3000, 20, 3);
        let curve = sat_curve(&llrs, &labels, 20).unwrap();
        assert!(curve.monotonicity_violations() <= 2, "{:?}", curve.points);
    }

    #[test]
    fn sat_curve_rejects_constant_llrs() {
        let labels = Labels::new(vec![0, 1], 2).unwrap();
        let flat = vec![LlrMatrixSeries::zeros(4, 2); 2];
        assert!(matches!(sat_curve(&flat, &labels, 5), Err(Error::DegenerateInput(_))));
        let s = ScoreSeries::new(vec![1.0, 0.0, 2.0, 1.0], 2, 2).unwrap().to_llr();
        assert!(matches!(sat_curve(&[s.clone(), s], &labels, 5), Err(Error::DegenerateInput(_))));
        let (llrs, labels) = oracle_set(50, 5, 4);
        assert_eq!(sat_curve(&llrs, &labels, 2).unwrap().points.len(), 2);
    }

    #[test]
    fn interpolation_is_linear() {
        let p = |m: f64, e: f64| SatPoint {
            threshold: 0.0,
            mean_hitting_time: m,
            balanced_error: e,
            sem_mht: 0.0,
            sem_err: 0.0,
        };
        let c = SatCurve {
            points: vec![p(1.0, 0.5), p(3.0, 0.1), p(5.0, 0.05)],
        };
        assert!((c.interpolate(2.0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(c.interpolate(5.0), Some(0.05));
        assert_eq!(c.interpolate(0.5), None);
    }

    #[test]
    fn oracle_posteriors_give_zero_mse() {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let heldout = src.sample_sequences(40, 8, 5).unwrap();
        let m = OraclePosteriorModel {
            source: src.clone(),
            tandem: TandemConfig::new(1, TandemFormula::Tandem),
        };
        let (mse, breakdown) = llr_mse(&m, &src, &heldout).unwrap();
        assert!(mse < 1e-8, "{mse}");
        assert_eq!(breakdown.len(), 8 * 9);
    }

    #[test]
    fn consistency_probe_is_deterministic() {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let heldout = src.sample_sequences(50, 5, 77).unwrap();
        let cfg = TrainConfig {
            iterations: 10,
            batch_size: 16,
            hidden: 4,
            order: 0,
            ..TrainConfig::default()
        };
        let r = consistency_probe(&cfg, &src, 5, &[40, 80], &[3, 3], &heldout).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[0], r.rows[1]);
        assert_eq!(r.rows[2], r.rows[3]);
        assert!(r.median_mse(40).unwrap() >= 0.0);
        assert!(consistency_probe(&cfg, &src, 5, &[80, 40], &[1], &heldout).is_err());
    }

    #[test]
    fn zero_threshold_ties_np_at_one() {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let t = optimality_comparison(&src, 8, &[0.0], 4000, 6).unwrap();
        let row = &t.rows[0];
        assert_eq!(row.mean_hitting_time, 1.0);
        assert_eq!(row.balanced_error, t.np_errors[0].0);
        assert_eq!(row.matched_np_time, Some(1));
    }

    #[test]
    fn msprt_beats_matched_np_and_scales_with_separation() {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let a = 100f64.ln();
        let base = optimality_comparison(&src, 80, &[a], 20_000, 7).unwrap();
        let row = &base.rows[0];
        let matched = row.matched_np_time.expect("NP reaches the MSPRT error within T");
        assert!(row.mean_hitting_time < matched as f64, "{row:?}");
        let wide = optimality_comparison(&src.scaled(2.0).unwrap(), 80, &[a], 20_000, 7).unwrap();
        assert!(wide.rows[0].mean_hitting_time < row.mean_hitting_time);
        assert!(wide.rows[0].matched_np_time.unwrap() < matched);
    }

    #[test]
    fn compare_losses_single_entry() {
        let task = SyntheticTask {
            train_size: 120,
            valid_size: 90,
            len: 6,
            ..SyntheticTask::standard()
        };
        let cfg = TrainConfig {
            iterations: 30,
            batch_size: 32,
            hidden: 6,
            order: 0,
            use_multiplet: false,
            ..TrainConfig::default()
        };
        let cmp = compare_losses(&task, &cfg, &[LlrLossKind::Lsel], &[1], 5).unwrap();
        assert_eq!(cmp.summary.len(), 1);
        assert_eq!(cmp.summary[0].rank, 1);
        assert!(cmp.runs[0].trace.iter().all(|r| r.llr >= 0.0));
        assert!(compare_losses(&task, &cfg, &[], &[1], 5).is_err());
    }

    proptest! {
        #[test]
        fn balanced_error_invariances(
            seed in 0u64..5000,
            perm_seed in 0u64..5000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 3;
            let n = 30;
            let y: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
            let d: Vec<Decision> = (0..n).map(|_| dec(rng.random_range(0..k), 1)).collect();
            let base = balanced_error(&d, &Labels::new(y.clone(), k).unwrap()).unwrap();
            // shuffle examples
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                idx.swap(i, prng.random_range(0..=i));
            }
            let y2: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let d2: Vec<Decision> = idx.iter().map(|&i| d[i]).collect();
            prop_assert_eq!(base, balanced_error(&d2, &Labels::new(y2, k).unwrap()).unwrap());
            // relabel classes jointly
            let sigma = [2usize, 0, 1];
            let y3: Vec<usize> = y.iter().map(|&c| sigma[c]).collect();
            let d3: Vec<Decision> = d.iter().map(|x| dec(sigma[x.predicted], 1)).collect();
            let permuted = balanced_error(&d3, &Labels::new(y3, k).unwrap()).unwrap();
            prop_assert!((base - permuted).abs() < 1e-15);
        }
    }
}
