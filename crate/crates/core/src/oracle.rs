//! Synthetic Gaussian sequence sources with closed-form LLRs.
//!
//! Frames of a class-`k` sequence are i.i.d. `N(μ_k, σ² I_d)`. For this family
//! the LLR matrix is linear in the observed frames:
//!
//! ```text
//! λ_kl(X^(1,t)) = Σ_{s≤t} [ x_s·(μ_k − μ_l) − (‖μ_k‖² − ‖μ_l‖²)/2 ] / σ²
//! ```
//!
//! Sampling is keyed by `(seed, sequence index, frame index)` so a batch is
//! bit-identical regardless of how the work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Labels, LlrMatrixSeries, PosteriorSeries, ScoreSeries, SequenceBatch};
use crate::error::{invalid, Result};
use crate::numeric::log_sum_exp;

/// Isotropic Gaussian class-conditional source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSource {
    means: Vec<Vec<f64>>,
    sigma: f64,
    priors: Vec<f64>,
}

impl GaussianSource {
    /// `means[k]` is `μ_k`; `sigma` is the per-coordinate standard deviation.
    /// Priors default to uniform.
    pub fn new(means: Vec<Vec<f64>>, sigma: f64, priors: Option<Vec<f64>>) -> Result<Self> {
        let k = means.len();
        if k < 2 {
            return invalid("a source needs at least 2 classes");
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return invalid("class means must share a positive dimension");
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("class means must be finite");
        }
        for i in 0..k {
            for j in 0..i {
                if means[i] == means[j] {
                    return invalid(format!("classes {j} and {i} have identical means"));
                }
            }
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return invalid("sigma must be positive and finite");
        }
        let priors = priors.unwrap_or_else(|| vec![1.0 / k as f64; k]);
        if priors.len() != k || priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("priors must be K nonnegative numbers");
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("priors must sum to 1");
        }
        Ok(Self {
            means,
            sigma,
            priors,
        })
    }

    /// `K` means evenly spaced on a circle in the first two coordinates so that
    /// neighbouring classes are `separation` apart.
    pub fn ring(classes: usize, dim: usize, separation: f64, sigma: f64) -> Result<Self> {
        if dim < 2 && classes > 2 {
            return invalid("a ring of more than 2 classes needs dim >= 2");
        }
        let angle = std::f64::consts::TAU / classes as f64;
        let radius = separation / (2.0 * (angle / 2.0).sin());
        let means = (0..classes)
            .map(|k| {
                let mut m = vec![0.0; dim];
                if classes == 2 && dim == 1 {
                    m[0] = if k == 0 { -separation / 2.0 } else { separation / 2.0 };
                } else {
                    let th = angle * k as f64;
                    m[0] = radius * th.cos();
                    m[1] = radius * th.sin();
                }
                m
            })
            .collect();
        Self::new(means, sigma, None)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// Copy of this source with every mean multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let means = self
            .means
            .iter()
            .map(|m| m.iter().map(|v| v * factor).collect())
            .collect();
        Self::new(means, self.sigma, Some(self.priors.clone()))
    }

    fn rng_for(seed: u64, sequence: u64, slot: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sequence);
        rng.set_word_pos((slot as u128) << 32);
        rng
    }

    /// Draws sequence `index` of the stream identified by `seed`: its label
    /// and its `len x d` frames.
    pub fn sample_one(&self, seed: u64, index: u64, len: usize) -> (usize, Vec<f64>) {
        let mut rng = Self::rng_for(seed, index, 0);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = self.num_classes() - 1;
        for (k, p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                label = k;
                break;
            }
        }
        let d = self.dim();
        let mut frames = Vec::with_capacity(len * d);
        for t in 0..len {
            let mut rng = Self::rng_for(seed, index, t as u64 + 1);
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                frames.push(self.means[label][j] + self.sigma * z);
            }
        }
        (label, frames)
    }

    /// Draws `count` labelled sequences of `len` frames.
    pub fn sample_sequences(&self, count: usize, len: usize, seed: u64) -> Result<SequenceBatch> {
        if count == 0 || len == 0 {
            return invalid("need at least one sequence of at least one frame");
        }
        let draws: Vec<(usize, Vec<f64>)> = (0..count as u64)
            .into_par_iter()
            .map(|i| self.sample_one(seed, i, len))
            .collect();
        let mut labels = Vec::with_capacity(count);
        let mut features = Vec::with_capacity(count * len * self.dim());
        for (y, f) in draws {
            labels.push(y);
            features.extend(f);
        }
        SequenceBatch::new(
            features,
            len,
            self.dim(),
            Labels::new(labels, self.num_classes())?,
        )
    }

    /// Per-frame log-likelihood up to a class-independent constant:
    /// `(x·μ_k − ‖μ_k‖²/2) / σ²`.
    fn frame_scores(&self, x: &[f64], out: &mut [f64]) {
        let s2 = self.sigma * self.sigma;
        for (k, m) in self.means.iter().enumerate() {
            let dot: f64 = x.iter().zip(m).map(|(a, b)| a * b).sum();
            let norm: f64 = m.iter().map(|v| v * v).sum();
            out[k] = (dot - 0.5 * norm) / s2;
        }
    }

    /// Cumulative per-class log-likelihood scores of a `T x d` sequence.
    pub fn true_scores(&self, frames: &[f64]) -> Result<ScoreSeries> {
        let d = self.dim();
        if frames.is_empty() || frames.len() % d != 0 {
            return invalid("frame tensor does not match the source dimension");
        }
        let len = frames.len() / d;
        let k = self.num_classes();
        let mut scores = vec![0.0; len * k];
        let mut step = vec![0.0; k];
        for t in 0..len {
            self.frame_scores(&frames[t * d..(t + 1) * d], &mut step);
            for c in 0..k {
                let prev = if t == 0 { 0.0 } else { scores[(t - 1) * k + c] };
                scores[t * k + c] = prev + step[c];
            }
        }
        ScoreSeries::new(scores, len, k)
    }

    /// Ground-truth LLR matrix series of a `T x d` sequence.
    pub fn true_llr(&self, frames: &[f64]) -> Result<LlrMatrixSeries> {
        Ok(self.true_scores(frames)?.to_llr())
    }

    /// Bayes posterior `p(k | window) ∝ π_k Π_s N(x_s; μ_k, σ² I)`.
    pub fn true_posterior(&self, window: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if window.is_empty() || window.len() % d != 0 {
            return invalid("window must hold a positive number of frames");
        }
        let k = self.num_classes();
        let mut logp: Vec<f64> = self.priors.iter().map(|p| p.ln()).collect();
        let mut step = vec![0.0; k];
        for x in window.chunks_exact(d) {
            self.frame_scores(x, &mut step);
            for c in 0..k {
                logp[c] += step[c];
            }
        }
        let lse = log_sum_exp(&logp);
        Ok(logp.iter().map(|v| (v - lse).exp()).collect())
    }

    /// Log of [`true_posterior`](Self::true_posterior), computed without
    /// leaving log space.
    pub fn true_log_posterior(&self, window: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if window.is_empty() || window.len() % d != 0 {
            return invalid("window must hold a positive number of frames");
        }
        let k = self.num_classes();
        let mut logp: Vec<f64> = self.priors.iter().map(|p| p.ln()).collect();
        let mut step = vec![0.0; k];
        for x in window.chunks_exact(d) {
            self.frame_scores(x, &mut step);
            for c in 0..k {
                logp[c] += step[c];
            }
        }
        let lse = log_sum_exp(&logp);
        Ok(logp.iter().map(|v| v - lse).collect())
    }

    /// Bayes posteriors for every window of length `1..=min(t+1, max_window)`.
    pub fn posterior_series(&self, frames: &[f64], max_window: usize) -> Result<PosteriorSeries> {
        let d = self.dim();
        let len = frames.len() / d;
        let mut out = PosteriorSeries::new(len, max_window, self.num_classes());
        for t in 0..len {
            for w in 1..=max_window.min(t + 1) {
                let window = &frames[(t + 1 - w) * d..(t + 1) * d];
                out.set_log_probs(t, w, &self.true_log_posterior(window)?)?;
            }
        }
        Ok(out)
    }

    /// `I_kl = E_k[λ_kl(1)] = ‖μ_k − μ_l‖² / (2σ²)`, row-major.
    pub fn kl_matrix(&self) -> Vec<f64> {
        let k = self.num_classes();
        let s2 = self.sigma * self.sigma;
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let dist: f64 = self.means[i]
                        .iter()
                        .zip(&self.means[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    out[i * k + j] = dist / (2.0 * s2);
                }
            }
        }
        out
    }
}
