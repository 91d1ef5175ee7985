//! A small recurrent temporal integrator producing windowed class posteriors,
//! trained by hand-written backpropagation and AdamW.
//!
//! Each window of length `w ≤ N + 1` is processed by a tanh cell from a zero
//! state, followed by a linear readout and softmax. Windows sharing a start
//! frame share the recurrent prefix, so one pass over every start computes
//! all `T (N + 1)` windows.

use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ClassPriorStats, Labels, LlrMatrixSeries, PosteriorSeries, ScoreSeries, SequenceBatch,
    POSTERIOR_FLOOR,
};
use crate::error::{invalid, Error, Result};
use crate::losses::{multiplet, LlrLoss, LlrLossKind};
use crate::numeric::log_softmax_in_place;
use crate::oracle::GaussianSource;
use crate::tandem::{accumulate_window_grads, tandem_scores, TandemConfig, TandemFormula};

/// Input, hidden and output sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelShape {
    /// Named slices of the flat parameter vector, in storage order:
    /// `w_in` (h×d), `w_rec` (h×h), `b_h` (h), `w_out` (K×h), `b_out` (K).
    /// Matrices are row-major.
    pub fn slices(&self) -> [(&'static str, [usize; 2], Range<usize>); 5] {
        let (d, h, k) = (self.dim, self.hidden, self.classes);
        let mut at = 0;
        let mut next = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        [
            ("w_in", [h, d], next(h * d)),
            ("w_rec", [h, h], next(h * h)),
            ("b_h", [h, 1], next(h)),
            ("w_out", [k, h], next(k * h)),
            ("b_out", [k, 1], next(k)),
        ]
    }

    pub fn num_params(&self) -> usize {
        let (d, h, k) = (self.dim, self.hidden, self.classes);
        h * d + h * h + h + k * h + k
    }
}

/// Flat parameter vector with the layout of [`ModelShape::slices`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    shape: ModelShape,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        if shape.dim == 0 || shape.hidden == 0 || shape.classes < 2 {
            return invalid("model needs dim ≥ 1, hidden ≥ 1 and at least 2 classes");
        }
        if values.len() != shape.num_params() {
            return invalid(format!(
                "expected {} parameters, got {}",
                shape.num_params(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("parameters must be finite");
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: ModelShape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.num_params()])
    }

    /// Uniform in `±1/√fan_in`; recurrent-layer biases use the hidden fan-in.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; shape.num_params()];
        for (name, _, range) in shape.slices() {
            let fan_in = if name == "w_in" { shape.dim } else { shape.hidden };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.shape
            .slices()
            .into_iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, _, r)| &self.values[r])
    }

    fn parts(&self) -> [&[f64]; 5] {
        let s = self.shape.slices();
        [
            &self.values[s[0].2.clone()],
            &self.values[s[1].2.clone()],
            &self.values[s[2].2.clone()],
            &self.values[s[3].2.clone()],
            &self.values[s[4].2.clone()],
        ]
    }
}

/// Hidden states and unclamped log-posteriors of one forward pass.
struct Cache {
    /// `[(start * W + j) * h + r]` for the state after `j + 1` steps.
    hidden: Vec<f64>,
    /// [`PosteriorSeries`] layout, before flooring.
    log_probs: Vec<f64>,
}

fn check_sequence(params: &ModelParams, frames: &[f64]) -> Result<usize> {
    let d = params.shape.dim;
    if frames.is_empty() || frames.len() % d != 0 {
        return invalid(format!(
            "sequence of {} values is not a positive multiple of dim {d}",
            frames.len()
        ));
    }
    Ok(frames.len() / d)
}

fn run_forward(params: &ModelParams, frames: &[f64], order: usize) -> Result<(PosteriorSeries, Cache)> {
    let len = check_sequence(params, frames)?;
    let ModelShape {
        dim: d,
        hidden: h,
        classes: k,
    } = params.shape;
    let w = order + 1;
    let [w_in, w_rec, b_h, w_out, b_out] = params.parts();
    let mut hidden = vec![0.0; len * w * h];
    let mut log_probs = vec![f64::NAN; len * w * k];
    let mut posts = PosteriorSeries::new(len, w, k);
    for start in 0..len {
        for j in 0..w.min(len - start) {
            let end = start + j;
            let x = &frames[end * d..(end + 1) * d];
            let cur = (start * w + j) * h;
            for r in 0..h {
                let mut a = b_h[r];
                for c in 0..d {
                    a += w_in[r * d + c] * x[c];
                }
                if j > 0 {
                    let prev = cur - h;
                    for c in 0..h {
                        a += w_rec[r * h + c] * hidden[prev + c];
                    }
                }
                hidden[cur + r] = a.tanh();
            }
            let slot = (end * w + j) * k;
            let hs = &hidden[cur..cur + h];
            let z = &mut log_probs[slot..slot + k];
            for q in 0..k {
                z[q] = b_out[q] + w_out[q * h..(q + 1) * h].iter().zip(hs).map(|(a, b)| a * b).sum::<f64>();
            }
            log_softmax_in_place(z);
            posts.set_log_probs(end, j + 1, z)?;
        }
    }
    Ok((posts, Cache { hidden, log_probs }))
}

/// Posteriors for every window of length `1..=min(t+1, N+1)` ending at each
/// frame `t`.
pub fn forward(params: &ModelParams, frames: &[f64], order: usize) -> Result<PosteriorSeries> {
    run_forward(params, frames, order).map(|(p, _)| p)
}

/// Accumulates the parameter gradient of one sequence given `∂L/∂logits` in
/// the posterior slot layout.
fn backward_sequence(
    params: &ModelParams,
    frames: &[f64],
    cache: &Cache,
    order: usize,
    grad_logits: &[f64],
    out: &mut [f64],
) {
    let ModelShape {
        dim: d,
        hidden: h,
        classes: k,
    } = params.shape;
    let len = frames.len() / d;
    let w = order + 1;
    let [_, w_rec, _, w_out, _] = params.parts();
    let sl = params.shape.slices();
    let (o_in, o_rec, o_bh, o_out, o_bout) = (
        sl[0].2.start,
        sl[1].2.start,
        sl[2].2.start,
        sl[3].2.start,
        sl[4].2.start,
    );
    let mut dh = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut da = vec![0.0; h];
    for start in 0..len {
        let steps = w.min(len - start);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for j in (0..steps).rev() {
            let end = start + j;
            let gz = &grad_logits[(end * w + j) * k..(end * w + j + 1) * k];
            let cur = (start * w + j) * h;
            let hs = &cache.hidden[cur..cur + h];
            dh.copy_from_slice(&dh_next);
            for q in 0..k {
                let g = gz[q];
                if g == 0.0 {
                    continue;
                }
                out[o_bout + q] += g;
                for c in 0..h {
                    out[o_out + q * h + c] += g * hs[c];
                    dh[c] += w_out[q * h + c] * g;
                }
            }
            for r in 0..h {
                da[r] = dh[r] * (1.0 - hs[r] * hs[r]);
            }
            let x = &frames[end * d..(end + 1) * d];
            for r in 0..h {
                out[o_bh + r] += da[r];
                for c in 0..d {
                    out[o_in + r * d + c] += da[r] * x[c];
                }
            }
            if j > 0 {
                let prev = &cache.hidden[cur - h..cur];
                for r in 0..h {
                    for c in 0..h {
                        out[o_rec + r * h + c] += da[r] * prev[c];
                    }
                }
                for c in 0..h {
                    dh_next[c] = (0..h).map(|r| w_rec[r * h + c] * da[r]).sum();
                }
            }
        }
    }
}

/// Optimisation and architecture settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Markov order `N`.
    pub order: usize,
    pub formula: TandemFormula,
    /// Subtract the training-set log prior ratio inside the tandem formula.
    pub include_prior_ratio: bool,
    /// Weight of the LLR loss in `L_total = L_mult + γ L_llr`.
    pub gamma: f64,
    /// Include the multiplet loss in `L_total`.
    pub use_multiplet: bool,
    pub learning_rate: f64,
    /// Decoupled decay: every step multiplies parameters by `1 − weight_decay`.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: usize,
    pub llr_loss: LlrLossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            order: 1,
            formula: TandemFormula::Tandem,
            include_prior_ratio: false,
            gamma: 1.0,
            use_multiplet: true,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            batch_size: 64,
            iterations: 1000,
            seed: 0,
            hidden: 16,
            llr_loss: LlrLossKind::Lsel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return invalid("learning rate must be finite and nonnegative");
        }
        if !(self.weight_decay.is_finite() && (0.0..1.0).contains(&self.weight_decay)) {
            return invalid("weight decay must lie in [0, 1)");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return invalid("gamma must be finite and nonnegative");
        }
        if self.iterations == 0 {
            return invalid("iterations must be at least 1");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return invalid("batch size and hidden size must be positive");
        }
        Ok(())
    }

    pub fn tandem(&self) -> TandemConfig {
        TandemConfig {
            order: self.order,
            formula: self.formula,
            include_prior_ratio: self.include_prior_ratio,
        }
    }
}

/// Training objective with costs and priors resolved against a training set.
#[derive(Debug, Clone)]
pub struct Objective {
    pub cfg: TrainConfig,
    pub loss: LlrLoss,
    pub priors: ClassPriorStats,
}

impl Objective {
    pub fn new(cfg: TrainConfig, train_labels: &Labels) -> Result<Self> {
        let priors = ClassPriorStats::from_labels(train_labels);
        Ok(Self {
            cfg,
            loss: cfg.llr_loss.resolve(priors.counts())?,
            priors,
        })
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// The optimised objective.
    pub total: f64,
    /// Multiplet loss, reported even when excluded from `total`.
    pub mult: f64,
    pub llr: f64,
}

/// `L_total` and its gradient with respect to every parameter on `batch`.
pub fn backward(
    params: &ModelParams,
    batch: &SequenceBatch,
    objective: &Objective,
) -> Result<(LossParts, Vec<f64>)> {
    let cfg = &objective.cfg;
    let shape = params.shape;
    if batch.dim() != shape.dim || batch.num_classes() != shape.classes {
        return invalid("batch shape does not match the model");
    }
    let (len, k, m) = (batch.len(), shape.classes, batch.num_sequences());
    let order = cfg.order;
    let w = order + 1;
    let tandem = cfg.tandem();
    let priors = cfg.include_prior_ratio.then_some(&objective.priors);

    let forward: Vec<(PosteriorSeries, Cache)> = (0..m)
        .into_par_iter()
        .map(|i| run_forward(params, batch.sequence(i), order))
        .collect::<Result<_>>()?;
    let posts: Vec<PosteriorSeries> = forward.iter().map(|(p, _)| p.clone()).collect();
    let labels = batch.labels();

    let mult = multiplet(&posts, labels, order)?;
    let llrs: Vec<LlrMatrixSeries> = posts
        .par_iter()
        .map(|p| Ok(tandem_scores(p, &tandem, priors)?.to_llr()))
        .collect::<Result<_>>()?;
    let llr = objective.loss.evaluate(&llrs, labels)?;
    let score_grad = llr.score_gradient(k);

    let mut total = 0.0;
    if cfg.use_multiplet {
        total += mult.value;
    }
    if cfg.gamma != 0.0 {
        total += cfg.gamma * llr.value;
    }
    if !total.is_finite() {
        return Err(Error::NumericalDivergence {
            iteration: 0,
            reason: format!("non-finite loss (mult {}, llr {})", mult.value, llr.value),
        });
    }

    let per_seq = len * w * k;
    let floor = POSTERIOR_FLOOR.ln();
    let grads: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let cache = &forward[i].1;
            let mut g_logp = vec![0.0; per_seq];
            if cfg.gamma != 0.0 {
                accumulate_window_grads(
                    &score_grad[i * len * k..(i + 1) * len * k],
                    len,
                    k,
                    &tandem,
                    &mut g_logp,
                );
            }
            let mut g_logits = vec![0.0; per_seq];
            for slot in 0..len * w {
                let lp = &cache.log_probs[slot * k..(slot + 1) * k];
                if lp[0].is_nan() {
                    continue;
                }
                let gl = &g_logp[slot * k..(slot + 1) * k];
                let gz = &mut g_logits[slot * k..(slot + 1) * k];
                // clamped entries are constant in the forward value
                let masked = |q: usize| if lp[q] < floor { 0.0 } else { cfg.gamma * gl[q] };
                let sum: f64 = (0..k).map(masked).sum();
                for q in 0..k {
                    gz[q] = masked(q) - lp[q].exp() * sum;
                }
                if cfg.use_multiplet {
                    for q in 0..k {
                        gz[q] += mult.gradient[i * per_seq + slot * k + q];
                    }
                }
            }
            let mut out = vec![0.0; shape.num_params()];
            backward_sequence(params, batch.sequence(i), cache, order, &g_logits, &mut out);
            out
        })
        .collect();
    let mut grad = vec![0.0; shape.num_params()];
    for g in &grads {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalDivergence {
            iteration: 0,
            reason: "non-finite gradient".into(),
        });
    }
    Ok((
        LossParts {
            total,
            mult: mult.value,
            llr: llr.value,
        },
        grad,
    ))
}

/// Adam moments carried across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One AdamW step: `θ ← θ(1 − wd) − lr · m̂ / (√v̂ + ε)`.
    pub fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step as i32);
        let c2 = 1.0 - B2.powi(self.step as i32);
        for i in 0..theta.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
            theta[i] = theta[i] * (1.0 - weight_decay) - lr * update;
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    pub mult: f64,
    pub llr: f64,
}

/// Result of a training run. On divergence `params` holds the last finite
/// parameters and `divergence` the error.
#[derive(Debug)]
pub struct TrainRun {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub trace: Vec<TraceRow>,
    pub divergence: Option<Error>,
}

impl TrainRun {
    /// Turns a recorded divergence into an error.
    pub fn into_result(mut self) -> Result<TrainRun> {
        match self.divergence.take() {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Mini-batch indices for one iteration, drawn without replacement from a
/// PRNG stream keyed by the iteration number.
pub fn batch_indices(seed: u64, iteration: u64, total: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration + 1);
    let mut idx = sample(&mut rng, total, batch_size.min(total)).into_vec();
    idx.sort_unstable();
    idx
}

/// Trains from a fresh initialisation seeded by `cfg.seed`.
pub fn train(cfg: &TrainConfig, data: &SequenceBatch) -> Result<TrainRun> {
    cfg.validate()?;
    let shape = ModelShape {
        dim: data.dim(),
        hidden: cfg.hidden,
        classes: data.num_classes(),
    };
    let params = ModelParams::init(shape, cfg.seed)?;
    let opt = OptimizerState::new(shape.num_params());
    train_from(cfg, data, params, opt, cfg.iterations)
}

/// Continues training for `iterations` steps from the given state. Step
/// numbering continues from `optimizer.step`, so a resumed run draws the same
/// mini-batches an uninterrupted run would.
pub fn train_from(
    cfg: &TrainConfig,
    data: &SequenceBatch,
    mut params: ModelParams,
    mut optimizer: OptimizerState,
    iterations: usize,
) -> Result<TrainRun> {
    let mut check = *cfg;
    check.iterations = check.iterations.max(1);
    check.validate()?;
    if params.shape.dim != data.dim() || params.shape.classes != data.num_classes() {
        return invalid("checkpoint shape does not match the data");
    }
    if optimizer.m.len() != params.values.len() || optimizer.v.len() != params.values.len() {
        return invalid("optimizer state does not match the parameters");
    }
    if cfg.order + 1 > data.len() {
        return invalid(format!("order {} needs T ≥ {}", cfg.order, cfg.order + 1));
    }
    let objective = Objective::new(*cfg, data.labels())?;
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let iteration = optimizer.step as usize + 1;
        let idx = batch_indices(cfg.seed, optimizer.step, data.num_sequences(), cfg.batch_size);
        let batch = data.select(&idx);
        let (parts, grad) = match backward(&params, &batch, &objective) {
            Ok(v) => v,
            Err(Error::NumericalDivergence { reason, .. }) => {
                return Ok(TrainRun {
                    params,
                    optimizer,
                    trace,
                    divergence: Some(Error::NumericalDivergence { iteration, reason }),
                })
            }
            Err(e) => return Err(e),
        };
        trace.push(TraceRow {
            iteration,
            total: parts.total,
            mult: parts.mult,
            llr: parts.llr,
        });
        let mut next = params.values.clone();
        let mut next_opt = optimizer.clone();
        next_opt.apply(&mut next, &grad, cfg.learning_rate, cfg.weight_decay);
        if next.iter().any(|v| !v.is_finite()) {
            return Ok(TrainRun {
                params,
                optimizer,
                trace,
                divergence: Some(Error::NumericalDivergence {
                    iteration,
                    reason: "non-finite parameters after update".into(),
                }),
            });
        }
        params.values = next;
        optimizer = next_opt;
    }
    Ok(TrainRun {
        params,
        optimizer,
        trace,
        divergence: None,
    })
}

/// Anything that maps a sequence of frames to an LLR matrix series.
pub trait LlrEstimator: Sync {
    fn num_classes(&self) -> usize;
    fn estimate_llr(&self, frames: &[f64]) -> Result<LlrMatrixSeries>;
}

/// A trained model with its tandem settings.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub tandem: TandemConfig,
    /// Training-set counts, required when `tandem.include_prior_ratio`.
    pub priors: Option<ClassPriorStats>,
}

impl LlrEstimator for TrainedModel {
    fn num_classes(&self) -> usize {
        self.params.shape.classes
    }

    fn estimate_llr(&self, frames: &[f64]) -> Result<LlrMatrixSeries> {
        let posts = forward(&self.params, frames, self.tandem.order)?;
        Ok(tandem_scores(&posts, &self.tandem, self.priors.as_ref())?.to_llr())
    }
}

/// True LLRs of a Gaussian source.
impl LlrEstimator for GaussianSource {
    fn num_classes(&self) -> usize {
        GaussianSource::num_classes(self)
    }

    fn estimate_llr(&self, frames: &[f64]) -> Result<LlrMatrixSeries> {
        self.true_llr(frames)
    }
}

/// Oracle window posteriors fed through the tandem formula in place of a
/// trained network. The population log prior is subtracted from the scores,
/// since every oracle posterior carries it.
#[derive(Debug, Clone)]
pub struct OraclePosteriorModel {
    pub source: GaussianSource,
    pub tandem: TandemConfig,
}

impl LlrEstimator for OraclePosteriorModel {
    fn num_classes(&self) -> usize {
        self.source.num_classes()
    }

    fn estimate_llr(&self, frames: &[f64]) -> Result<LlrMatrixSeries> {
        let posts = self.source.posterior_series(frames, self.tandem.max_window())?;
        let cfg = TandemConfig {
            include_prior_ratio: false,
            ..self.tandem
        };
        let scores = tandem_scores(&posts, &cfg, None)?;
        let (len, k) = (scores.len(), scores.num_classes());
        let log_prior: Vec<f64> = self.source.priors().iter().map(|p| p.ln()).collect();
        let mut v = scores.values().to_vec();
        for t in 0..len {
            for c in 0..k {
                v[t * k + c] -= log_prior[c];
            }
        }
        Ok(ScoreSeries::new(v, len, k)?.to_llr())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::testutil::relative_error;

    fn tiny_batch(m: usize, len: usize, d: usize, k: usize, seed: u64) -> SequenceBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<f64> = (0..m * len * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let labels: Vec<usize> = (0..m).map(|i| i % k).collect();
        SequenceBatch::new(feats, len, d, Labels::new(labels, k).unwrap()).unwrap()
    }

    fn fd_check(cfg: TrainConfig, seed: u64) -> f64 {
        let batch = tiny_batch(6, 5, 2, 3, seed);
        let shape = ModelShape {
            dim: 2,
            hidden: 4,
            classes: 3,
        };
        let params = ModelParams::init(shape, seed).unwrap();
        let obj = Objective::new(cfg, batch.labels()).unwrap();
        let (_, analytic) = backward(&params, &batch, &obj).unwrap();
        let mut values = params.values().to_vec();
        let mut numeric = vec![0.0; values.len()];
        for j in 0..values.len() {
            let x = values[j];
            let h = 1e-5 * x.abs().max(1.0);
            values[j] = x + h;
            let up = backward(&ModelParams::new(shape, values.clone()).unwrap(), &batch, &obj).unwrap().0.total;
            values[j] = x - h;
            let down = backward(&ModelParams::new(shape, values.clone()).unwrap(), &batch, &obj).unwrap().0.total;
            values[j] = x;
            numeric[j] = (up - down) / (2.0 * h);
        }
        relative_error(&analytic, &numeric)
    }

    #[test]
    fn gradient_matches_finite_differences_for_every_loss() {
        for (i, kind) in LlrLossKind::all(0.9, 0.5).into_iter().enumerate() {
            for formula in [TandemFormula::Tandem, TandemFormula::TandemWithOblivion] {
                let cfg = TrainConfig {
                    order: 1,
                    formula,
                    gamma: 0.7,
                    llr_loss: kind,
                    ..TrainConfig::default()
                };
                let err = fd_check(cfg, 40 + i as u64);
                assert!(err < 1e-4, "{kind:?} {formula:?}: {err}");
            }
        }
    }

    #[test]
    fn gradient_with_prior_ratio_and_without_multiplet() {
        let cfg = TrainConfig {
            order: 2,
            include_prior_ratio: true,
            use_multiplet: false,
            ..TrainConfig::default()
        };
        assert!(fd_check(cfg, 7) < 1e-4);
    }

    #[test]
    fn zero_weights_give_uniform_posteriors() {
        let shape = ModelShape {
            dim: 3,
            hidden: 5,
            classes: 4,
        };
        let p = ModelParams::zeros(shape).unwrap();
        let frames: Vec<f64> = (0..18).map(|i| i as f64 * 0.3).collect();
        let posts = forward(&p, &frames, 2).unwrap();
        for t in 0..6 {
            for w in 1..=3.min(t + 1) {
                for v in posts.probs(t, w).unwrap() {
                    assert!((v - 0.25).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn posteriors_sum_to_one_and_are_window_local() {
        let shape = ModelShape {
            dim: 2,
            hidden: 6,
            classes: 3,
        };
        let p = ModelParams::init(shape, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let base = forward(&p, &frames, 2).unwrap();
        for t in 0..8 {
            for w in 1..=3.min(t + 1) {
                let s: f64 = base.probs(t, w).unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        // perturb frame 2; windows not covering it are unchanged
        let mut moved = frames.clone();
        moved[4] += 1.0;
        let other = forward(&p, &moved, 2).unwrap();
        for t in 0..8 {
            for w in 1..=3.min(t + 1) {
                let covers = t + 1 - w <= 2 && 2 <= t;
                let same = base.log_probs(t, w).unwrap() == other.log_probs(t, w).unwrap();
                assert_eq!(same, !covers, "t={t} w={w}");
            }
        }
    }

    #[test]
    fn order_zero_depends_on_single_frame() {
        let shape = ModelShape {
            dim: 2,
            hidden: 4,
            classes: 3,
        };
        let p = ModelParams::init(shape, 5).unwrap();
        let frames = vec![0.1, 0.2, -0.5, 0.9, 1.3, -0.7];
        let permuted = vec![1.3, -0.7, 0.1, 0.2, -0.5, 0.9];
        let a = forward(&p, &frames, 0).unwrap();
        let b = forward(&p, &permuted, 0).unwrap();
        assert_eq!(a.log_probs(0, 1).unwrap(), b.log_probs(1, 1).unwrap());
        assert_eq!(a.log_probs(1, 1).unwrap(), b.log_probs(2, 1).unwrap());
        assert_eq!(a.log_probs(2, 1).unwrap(), b.log_probs(0, 1).unwrap());
    }

    #[test]
    fn gamma_enters_linearly() {
        let batch = tiny_batch(6, 5, 2, 3, 8);
        let shape = ModelShape {
            dim: 2,
            hidden: 4,
            classes: 3,
        };
        let params = ModelParams::init(shape, 8).unwrap();
        let grad = |gamma: f64| {
            let cfg = TrainConfig {
                gamma,
                ..TrainConfig::default()
            };
            backward(&params, &batch, &Objective::new(cfg, batch.labels()).unwrap()).unwrap().1
        };
        let (g0, g1, g2) = (grad(0.0), grad(1.0), grad(2.0));
        for i in 0..g0.len() {
            let lhs = g2[i] - g0[i];
            let rhs = 2.0 * (g1[i] - g0[i]);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }
        // γ = 0 is the multiplet-only gradient
        let mult_only = TrainConfig {
            gamma: 0.0,
            llr_loss: LlrLossKind::Lsif,
            ..TrainConfig::default()
        };
        let g = backward(&params, &batch, &Objective::new(mult_only, batch.labels()).unwrap()).unwrap().1;
        assert_eq!(g, g0);
    }

    #[test]
    fn zero_learning_rate_applies_only_decay() {
        let data = tiny_batch(12, 4, 2, 3, 9);
        let base = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            iterations: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let init = ModelParams::init(
            ModelShape {
                dim: 2,
                hidden: 16,
                classes: 3,
            },
            0,
        )
        .unwrap();
        let run = train(&base, &data).unwrap();
        assert_eq!(run.params, init);
        let decayed = train(
            &TrainConfig {
                weight_decay: 0.1,
                ..base
            },
            &data,
        )
        .unwrap();
        for (a, b) in decayed.params.values().iter().zip(init.values()) {
            assert!((a - b * 0.9f64.powi(5)).abs() < 1e-15);
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let src = GaussianSource::ring(3, 2, 2.0, 1.0).unwrap();
        let data = src.sample_sequences(60, 6, 1).unwrap();
        let cfg = TrainConfig {
            iterations: 20,
            batch_size: 16,
            hidden: 6,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        let half = train(&TrainConfig { iterations: 12, ..cfg }, &data).unwrap();
        let rest = train_from(&cfg, &data, half.params, half.optimizer, 8).unwrap();
        assert_eq!(rest.params, a.params);
        assert_eq!(rest.trace.first().unwrap().iteration, 13);
    }

    #[test]
    fn smoke_training_halves_the_loss() {
        let src = GaussianSource::ring(3, 2, 3.0, 1.0).unwrap();
        let data = src.sample_sequences(400, 8, 2).unwrap();
        let cfg = TrainConfig {
            iterations: 500,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let run = train(&cfg, &data).unwrap();
        let first = run.trace.first().unwrap().total;
        let tail: f64 = run.trace[run.trace.len() - 20..].iter().map(|r| r.total).sum::<f64>() / 20.0;
        assert!(tail < 0.5 * first, "{first} -> {tail}");
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let src = GaussianSource::ring(3, 2, 3.0, 1.0).unwrap();
        let data = src.sample_sequences(50, 6, 3).unwrap();
        let ok = TrainConfig {
            iterations: 4,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let warm = train(&ok, &data).unwrap();
        // LLLR is of order K(K-1)T/2 here, so γ L_llr overflows at once
        let bad = TrainConfig {
            gamma: f64::MAX,
            llr_loss: LlrLossKind::Lllr,
            ..ok
        };
        let run = train_from(&bad, &data, warm.params.clone(), warm.optimizer.clone(), 3).unwrap();
        match &run.divergence {
            Some(Error::NumericalDivergence { iteration, .. }) => assert_eq!(*iteration, 5),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(run.trace.is_empty());
        assert_eq!(run.params, warm.params);
        assert!(matches!(run.into_result(), Err(Error::NumericalDivergence { .. })));
    }

    #[test]
    fn oracle_posterior_model_recovers_true_llr() {
        let src = GaussianSource::ring(3, 2, 1.0, 1.0).unwrap();
        let (_, frames) = src.sample_one(5, 0, 9);
        let truth = src.true_llr(&frames).unwrap();
        for order in [0, 2, 8] {
            let m = OraclePosteriorModel {
                source: src.clone(),
                tandem: TandemConfig::new(order, TandemFormula::Tandem),
            };
            let est = m.estimate_llr(&frames).unwrap();
            let err = est
                .values()
                .iter()
                .zip(truth.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "order {order}: {err}");
        }
    }

    #[test]
    fn shape_errors() {
        let shape = ModelShape {
            dim: 2,
            hidden: 3,
            classes: 2,
        };
        let p = ModelParams::zeros(shape).unwrap();
        assert!(matches!(forward(&p, &[1.0, 2.0, 3.0], 0), Err(Error::InvalidInput(_))));
        assert!(ModelParams::new(shape, vec![0.0; 3]).is_err());
        assert_eq!(shape.slices()[4].2.end, shape.num_params());
    }
}
