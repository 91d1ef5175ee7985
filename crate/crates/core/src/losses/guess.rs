//! Per-sample losses on score vectors, guess-aversion checks, gradient-scale
//! ratios and effective-number costs.

use super::LossOutput;
use crate::domain::{CostMatrix, ScoreVector};
use crate::error::{invalid, Error, Result};
use crate::numeric::{log_sum_exp, softplus};

/// Per-sample cost-sensitive losses, with `λ_yl = s_y − s_l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleLossKind {
    /// `C_y log(1 + Σ_{l≠y} e^{−λ_yl})`; needs row-constant costs.
    Clsel,
    /// `log(1 + Σ_{l≠y} C_yl e^{−λ_yl})`.
    Lscel,
    /// `(1/(K−1)) Σ_{l≠y} C_yl log(1 + e^{−λ_yl})`.
    CLogistic,
    /// `(1/(K−1)) Σ_{l≠y} log(1 + C_yl e^{−λ_yl})`.
    LogisticC,
    /// `Σ_{k≠y} C_yk log(1 + Σ_{l≠k} e^{s_l − s_k})`.
    NgaLsel,
}

fn check_scores(s: &ScoreVector, y: usize, costs: &CostMatrix) -> Result<()> {
    if s.len() < 2 || s.len() != costs.num_classes() {
        return invalid("score vector and cost matrix sizes differ");
    }
    if y >= s.len() {
        return invalid(format!("class {y} out of range"));
    }
    if s.0.iter().any(|v| !v.is_finite()) {
        return invalid("scores must be finite");
    }
    Ok(())
}

pub fn sample_loss(kind: SampleLossKind, s: &ScoreVector, y: usize, costs: &CostMatrix) -> Result<f64> {
    check_scores(s, y, costs)?;
    let k = s.len();
    let v = &s.0;
    let rivals = || (0..k).filter(move |&l| l != y);
    Ok(match kind {
        SampleLossKind::Clsel => {
            let c = costs
                .row_value(y)
                .ok_or_else(|| Error::InvalidInput("CLSEL requires row-constant costs".into()))?;
            let mut z: Vec<f64> = rivals().map(|l| v[l] - v[y]).collect();
            z.push(0.0);
            c * log_sum_exp(&z)
        }
        SampleLossKind::Lscel => {
            let mut z: Vec<f64> = rivals()
                .filter(|&l| costs.get(y, l) > 0.0)
                .map(|l| costs.get(y, l).ln() + v[l] - v[y])
                .collect();
            z.push(0.0);
            log_sum_exp(&z)
        }
        SampleLossKind::CLogistic => {
            rivals().map(|l| costs.get(y, l) * softplus(v[l] - v[y])).sum::<f64>() / (k - 1) as f64
        }
        SampleLossKind::LogisticC => {
            rivals()
                .filter(|&l| costs.get(y, l) > 0.0)
                .map(|l| softplus(costs.get(y, l).ln() + v[l] - v[y]))
                .sum::<f64>()
                / (k - 1) as f64
        }
        SampleLossKind::NgaLsel => {
            // log(1 + Σ_{l≠k} e^{s_l − s_k}) = LSE(s) − s_k
            let lse = log_sum_exp(v);
            rivals().map(|j| costs.get(y, j) * (lse - v[j])).sum()
        }
    })
}

/// Whether `ℓ(s, k; C) < ℓ(0, k; C)` for a score vector in the support set
/// `S_k`. Fails with `PreconditionFailed` when `s ∉ S_k`.
pub fn is_guess_averse_sample(
    kind: SampleLossKind,
    s: &ScoreVector,
    k: usize,
    costs: &CostMatrix,
) -> Result<bool> {
    check_scores(s, k, costs)?;
    if !s.in_support(k) {
        return Err(Error::PreconditionFailed(format!(
            "score vector is not in the support set of class {k}"
        )));
    }
    let guess = ScoreVector(vec![0.0; s.len()]);
    Ok(sample_loss(kind, s, k, costs)? < sample_loss(kind, &guess, k, costs)?)
}

/// Mean NGA-LSEL over samples, with gradient with respect to the scores
/// (layout `[i][k]`).
pub fn nga_lsel(scores: &[ScoreVector], labels: &[usize], costs: &CostMatrix) -> Result<LossOutput> {
    if scores.len() != labels.len() {
        return invalid("score and label counts differ");
    }
    if scores.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    let k = costs.num_classes();
    let scale = 1.0 / scores.len() as f64;
    let mut value = 0.0;
    let mut gradient = vec![0.0; scores.len() * k];
    for (i, (s, &y)) in scores.iter().zip(labels).enumerate() {
        value += scale * sample_loss(SampleLossKind::NgaLsel, s, y, costs)?;
        let lse = log_sum_exp(&s.0);
        let weight: f64 = (0..k).filter(|&j| j != y).map(|j| costs.get(y, j)).sum();
        let g = &mut gradient[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += scale * weight * (s.0[j] - lse).exp();
            if j != y {
                *gj -= scale * costs.get(y, j);
            }
        }
    }
    Ok(LossOutput { value, gradient })
}

/// Ratio of the largest to the smallest per-rival gradient magnitude for one
/// sample, for LSEL and for the logistic loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientScales {
    pub log_r_lsel: f64,
    pub log_r_logistic: f64,
}

impl GradientScales {
    pub fn r_lsel(&self) -> f64 {
        self.log_r_lsel.exp()
    }

    pub fn r_logistic(&self) -> f64 {
        self.log_r_logistic.exp()
    }
}

/// With `a_l = −λ̂_yl` over rivals `l ≠ y`, LSEL gradients scale as `e^{a_l}`
/// and logistic gradients as `σ(a_l)`. Both ratios are 1 for two classes.
pub fn gradient_scales(row: &[f64], y: usize) -> Result<GradientScales> {
    if y >= row.len() || row.len() < 2 {
        return invalid("class index out of range");
    }
    if row.iter().any(|v| !v.is_finite()) {
        return invalid("LLR row must be finite");
    }
    let a = row.iter().enumerate().filter(|&(l, _)| l != y).map(|(_, &x)| -x);
    let (lo, hi) = a.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let log_r_lsel = hi - lo;
    Ok(GradientScales {
        log_r_lsel,
        log_r_logistic: log_r_lsel - (softplus(hi) - softplus(lo)),
    })
}

/// Row-constant costs `C_k = (1 − β) / (1 − β^{M_k})`, the inverse effective
/// number of samples. `β = 1` gives the limit `1/M_k`.
pub fn effective_number_costs(counts: &[usize], beta: f64) -> Result<CostMatrix> {
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("beta must lie in [0, 1], got {beta}"));
    }
    if counts.len() < 2 {
        return invalid("need at least two classes");
    }
    let row = counts
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            if m == 0 {
                Err(Error::EmptyClass(k))
            } else if beta == 1.0 {
                Ok(1.0 / m as f64)
            } else {
                Ok((1.0 - beta) / -(m as f64 * beta.ln()).exp_m1())
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    CostMatrix::row_constant(&row)
}
