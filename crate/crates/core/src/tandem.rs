//! Posterior-to-LLR conversion under an `N`-th order Markov approximation.
//!
//! Both formulae are written as per-class log-scores `L_k(t)`, a signed sum
//! of window log-posteriors, so the resulting LLR matrix `L_k − L_l` is
//! antisymmetric and additive by construction.
//!
//! For the first `N` frames there is no full window yet; the longest
//! available window (length `t`) stands in for it.

use serde::{Deserialize, Serialize};

use crate::domain::{ClassPriorStats, LlrMatrixSeries, PosteriorSeries, ScoreSeries};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TandemFormula {
    /// Telescoping sum over all windows (M-TANDEM).
    Tandem,
    /// Latest window only (M-TANDEM with oblivion).
    TandemWithOblivion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TandemConfig {
    /// Markov order `N`; windows hold at most `N + 1` frames.
    pub order: usize,
    pub formula: TandemFormula,
    /// Subtract `log(M_k / M_l)` once. Off by default.
    pub include_prior_ratio: bool,
}

impl TandemConfig {
    pub fn new(order: usize, formula: TandemFormula) -> Self {
        Self {
            order,
            formula,
            include_prior_ratio: false,
        }
    }

    pub fn max_window(&self) -> usize {
        self.order + 1
    }
}

/// One signed window term: `sign * log p̂(· | window of length `window` ending at `end`)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTerm {
    pub end: usize,
    pub window: usize,
    pub sign: f64,
}

/// Window terms making up `L(t)` (0-based `t`).
pub fn window_terms(t: usize, cfg: &TandemConfig) -> Vec<WindowTerm> {
    let n = t + 1;
    let full = cfg.order + 1;
    if n <= full || cfg.formula == TandemFormula::TandemWithOblivion {
        return vec![WindowTerm {
            end: t,
            window: n.min(full),
            sign: 1.0,
        }];
    }
    let mut terms = Vec::with_capacity(2 * (n - cfg.order));
    for end in cfg.order..=t {
        terms.push(WindowTerm {
            end,
            window: full,
            sign: 1.0,
        });
    }
    if cfg.order > 0 {
        for end in cfg.order..t {
            terms.push(WindowTerm {
                end,
                window: cfg.order,
                sign: -1.0,
            });
        }
    }
    terms
}

/// Per-class log-scores for the configured formula.
pub fn tandem_scores(
    posteriors: &PosteriorSeries,
    cfg: &TandemConfig,
    priors: Option<&ClassPriorStats>,
) -> Result<ScoreSeries> {
    let len = posteriors.len();
    let k = posteriors.num_classes();
    if len == 0 {
        return invalid("empty posterior series");
    }
    let prior_shift = prior_shift(cfg, priors, k)?;
    let mut scores = vec![0.0; len * k];
    for t in 0..len {
        let row = &mut scores[t * k..(t + 1) * k];
        for term in window_terms(t, cfg) {
            let lp = posteriors.log_probs(term.end, term.window)?;
            for (s, v) in row.iter_mut().zip(lp) {
                *s += term.sign * v;
            }
        }
        for (s, p) in row.iter_mut().zip(&prior_shift) {
            *s -= p;
        }
    }
    ScoreSeries::new(scores, len, k)
}

fn prior_shift(
    cfg: &TandemConfig,
    priors: Option<&ClassPriorStats>,
    k: usize,
) -> Result<Vec<f64>> {
    if !cfg.include_prior_ratio {
        return Ok(vec![0.0; k]);
    }
    let priors = priors
        .ok_or_else(|| Error::InvalidInput("prior ratio requested without class counts".into()))?;
    if priors.num_classes() != k {
        return invalid("class count mismatch between priors and posteriors");
    }
    (0..k)
        .map(|c| priors.log_count(c).ok_or(Error::EmptyClass(c)))
        .collect()
}

/// M-TANDEM LLR matrices.
pub fn m_tandem_llr(
    posteriors: &PosteriorSeries,
    cfg: &TandemConfig,
    priors: Option<&ClassPriorStats>,
) -> Result<LlrMatrixSeries> {
    let cfg = TandemConfig {
        formula: TandemFormula::Tandem,
        ..*cfg
    };
    Ok(tandem_scores(posteriors, &cfg, priors)?.to_llr())
}

/// M-TANDEMwO LLR matrices.
pub fn m_tandemwo_llr(
    posteriors: &PosteriorSeries,
    cfg: &TandemConfig,
    priors: Option<&ClassPriorStats>,
) -> Result<LlrMatrixSeries> {
    let cfg = TandemConfig {
        formula: TandemFormula::TandemWithOblivion,
        ..*cfg
    };
    Ok(tandem_scores(posteriors, &cfg, priors)?.to_llr())
}

/// Back-propagates `∂L/∂scores` (`T x K`) onto window log-posteriors.
///
/// `out` uses the [`PosteriorSeries`] layout: `(end * max_window + w - 1) * K + k`.
pub fn accumulate_window_grads(
    score_grad: &[f64],
    len: usize,
    classes: usize,
    cfg: &TandemConfig,
    out: &mut [f64],
) {
    let max_window = cfg.max_window();
    for t in 0..len {
        let g = &score_grad[t * classes..(t + 1) * classes];
        for term in window_terms(t, cfg) {
            let off = (term.end * max_window + term.window - 1) * classes;
            for (o, gv) in out[off..off + classes].iter_mut().zip(g) {
                *o += term.sign * gv;
            }
        }
    }
}
