//! Log-sum-exp losses: LSEL and its prior- and cost-weighted variants.

use super::{check_batch, LossOutput};
use crate::domain::{ClassPriorStats, CostMatrix, Labels, LlrMatrixSeries};
use crate::error::{invalid, Error, Result};

/// `log(1 + Σ_{l≠y} e^{ω_l − λ_yl})` over the rows where `log_weight` is
/// defined. Adds `scale · ∂/∂λ_yl` into `grad_row`.
pub(crate) fn weighted_lse_term<F>(
    row: &[f64],
    y: usize,
    log_weight: F,
    grad_row: &mut [f64],
    scale: f64,
) -> f64
where
    F: Fn(usize) -> Option<f64>,
{
    let z = |l: usize| -> Option<f64> {
        if l == y {
            None
        } else {
            log_weight(l).map(|w| w - row[l])
        }
    };
    let k = row.len();
    let m = (0..k).filter_map(z).fold(0.0f64, f64::max);
    let acc = (-m).exp() + (0..k).filter_map(z).map(|zl| (zl - m).exp()).sum::<f64>();
    let f = m + acc.ln();
    for l in 0..k {
        if let Some(zl) = z(l) {
            grad_row[l] -= scale * (zl - f).exp();
        }
    }
    f
}

fn row_offsets(i: usize, t: usize, len: usize, k: usize, y: usize) -> std::ops::Range<usize> {
    let base = (i * len + t) * k * k + y * k;
    base..base + k
}

/// Class-balanced LSEL:
/// `(1/(K T)) Σ_k Σ_t (1/M_k) Σ_{i∈I_k} log(1 + Σ_{l≠k} e^{−λ̂_kl})`.
pub fn lsel(llrs: &[LlrMatrixSeries], labels: &Labels) -> Result<LossOutput> {
    let (len, k) = check_batch(llrs, labels)?;
    let present = labels.present_classes().count();
    let mut gradient = vec![0.0; llrs.len() * len * k * k];
    let mut value = 0.0;
    for (i, (series, &y)) in llrs.iter().zip(labels.as_slice()).enumerate() {
        let scale = 1.0 / (present * len * labels.count(y)) as f64;
        for t in 0..len {
            let row = &series.matrix(t)[y * k..(y + 1) * k];
            let g = &mut gradient[row_offsets(i, t, len, k, y)];
            value += scale * weighted_lse_term(row, y, |_| Some(0.0), g, scale);
        }
    }
    Ok(LossOutput { value, gradient })
}

/// Prior-corrected LSEL:
/// `(1/(M T)) Σ_i Σ_t log(1 + Σ_{l≠y} (M_l/M_y) e^{−λ̂_yl})`.
pub fn mod_lsel(
    llrs: &[LlrMatrixSeries],
    labels: &Labels,
    priors: &ClassPriorStats,
) -> Result<LossOutput> {
    let (len, k) = check_batch(llrs, labels)?;
    if priors.num_classes() != k {
        return invalid("prior statistics class count mismatch");
    }
    let scale = 1.0 / (llrs.len() * len) as f64;
    let mut gradient = vec![0.0; llrs.len() * len * k * k];
    let mut value = 0.0;
    for (i, (series, &y)) in llrs.iter().zip(labels.as_slice()).enumerate() {
        let log_my = priors.log_count(y).ok_or(Error::EmptyClass(y))?;
        for t in 0..len {
            let row = &series.matrix(t)[y * k..(y + 1) * k];
            let g = &mut gradient[row_offsets(i, t, len, k, y)];
            value += scale
                * weighted_lse_term(row, y, |l| priors.log_count(l).map(|lm| lm - log_my), g, scale);
        }
    }
    Ok(LossOutput { value, gradient })
}

/// Cost-weighted LSEL with a row-constant cost `C_y` outside the logarithm:
/// `(1/(M T)) Σ_i Σ_t C_y log(1 + Σ_{l≠y} e^{−λ̂_yl})`.
pub fn clsel(llrs: &[LlrMatrixSeries], labels: &Labels, costs: &CostMatrix) -> Result<LossOutput> {
    let (len, k) = check_batch(llrs, labels)?;
    if costs.num_classes() != k {
        return invalid("cost matrix class count mismatch");
    }
    if !costs.is_row_constant() {
        return invalid("CLSEL requires a row-constant cost matrix");
    }
    let base = 1.0 / (llrs.len() * len) as f64;
    let mut gradient = vec![0.0; llrs.len() * len * k * k];
    let mut value = 0.0;
    for (i, (series, &y)) in llrs.iter().zip(labels.as_slice()).enumerate() {
        let scale = base * costs.row_value(y).unwrap_or(0.0);
        for t in 0..len {
            let row = &series.matrix(t)[y * k..(y + 1) * k];
            let g = &mut gradient[row_offsets(i, t, len, k, y)];
            value += scale * weighted_lse_term(row, y, |_| Some(0.0), g, scale);
        }
    }
    Ok(LossOutput { value, gradient })
}

/// Cost-weighted LSEL with costs inside the logarithm:
/// `(1/(M T)) Σ_i Σ_t log(1 + Σ_{l≠y} C_yl e^{−λ̂_yl})`.
pub fn lscel(llrs: &[LlrMatrixSeries], labels: &Labels, costs: &CostMatrix) -> Result<LossOutput> {
    let (len, k) = check_batch(llrs, labels)?;
    if costs.num_classes() != k {
        return invalid("cost matrix class count mismatch");
    }
    let scale = 1.0 / (llrs.len() * len) as f64;
    let mut gradient = vec![0.0; llrs.len() * len * k * k];
    let mut value = 0.0;
    for (i, (series, &y)) in llrs.iter().zip(labels.as_slice()).enumerate() {
        for t in 0..len {
            let row = &series.matrix(t)[y * k..(y + 1) * k];
            let g = &mut gradient[row_offsets(i, t, len, k, y)];
            let log_c = |l: usize| {
                let c = costs.get(y, l);
                (c > 0.0).then(|| c.ln())
            };
            value += scale * weighted_lse_term(row, y, log_c, g, scale);
        }
    }
    Ok(LossOutput { value, gradient })
}
