//! Binary density-ratio losses applied to every ordered class pair.
//!
//! For each time step and ordered pair `k ≠ l` the pair loss reads the entries
//! `λ̂_kl` of samples from class `k` (numerator) and class `l` (denominator).
//! The total is the plain sum over time steps and pairs.

use serde::{Deserialize, Serialize};

use super::{check_batch, LossOutput};
use crate::domain::{Labels, LlrMatrixSeries};
use crate::error::Result;
use crate::numeric::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DreKind {
    /// `(1/M_l) Σ_{I_l} Λ² − (1/M_k) Σ_{I_k} Λ`.
    Lsif,
    /// LSIF plus `γ |(1/M_l) Σ_{I_l} Λ − 1|`.
    LsifWithConstraint { gamma: f64 },
    /// `(1/M_l) Σ_{I_l} λ − (1/M_k) Σ_{I_k} λ`.
    Dskl,
    /// `−(1/M_k) Σ_{I_k} λ + γ |(1/M_l) Σ_{I_l} Λ − 1|`.
    Barr { gamma: f64 },
    /// `(1/(M_k + M_l)) [Σ_{I_l} σ(λ) + Σ_{I_k} (1 − σ(λ))]`.
    Lllr,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn binary_dre_suite(
    llrs: &[LlrMatrixSeries],
    labels: &Labels,
    kind: DreKind,
) -> Result<LossOutput> {
    let (len, k) = check_batch(llrs, labels)?;
    let kk = k * k;
    let mut gradient = vec![0.0; llrs.len() * len * kk];
    let mut value = 0.0;
    let at = |i: usize, t: usize, a: usize, b: usize| (i * len + t) * kk + a * k + b;

    for t in 0..len {
        for num in 0..k {
            for den in (0..k).filter(|&d| d != num) {
                let i_num = labels.indices_of(num);
                let i_den = labels.indices_of(den);
                let (m_num, m_den) = (i_num.len() as f64, i_den.len() as f64);
                let lam = |i: usize| llrs[i].get(t, num, den);

                // constraint term γ |(1/M_l) Σ Λ − 1| shared by LSIFwC and BARR
                let constraint = |gamma: f64, value: &mut f64, gradient: &mut [f64]| {
                    if i_den.is_empty() {
                        return;
                    }
                    let mean: f64 = i_den.iter().map(|&i| lam(i).exp()).sum::<f64>() / m_den;
                    *value += gamma * (mean - 1.0).abs();
                    let s = gamma * sign(mean - 1.0) / m_den;
                    for &i in i_den {
                        gradient[at(i, t, num, den)] += s * lam(i).exp();
                    }
                };

                match kind {
                    DreKind::Lsif | DreKind::LsifWithConstraint { .. } => {
                        for &i in i_den {
                            let r = lam(i).exp();
                            value += r * r / m_den;
                            gradient[at(i, t, num, den)] += 2.0 * r * r / m_den;
                        }
                        for &i in i_num {
                            let r = lam(i).exp();
                            value -= r / m_num;
                            gradient[at(i, t, num, den)] -= r / m_num;
                        }
                        if let DreKind::LsifWithConstraint { gamma } = kind {
                            constraint(gamma, &mut value, &mut gradient);
                        }
                    }
                    DreKind::Dskl => {
                        for &i in i_den {
                            value += lam(i) / m_den;
                            gradient[at(i, t, num, den)] += 1.0 / m_den;
                        }
                        for &i in i_num {
                            value -= lam(i) / m_num;
                            gradient[at(i, t, num, den)] -= 1.0 / m_num;
                        }
                    }
                    DreKind::Barr { gamma } => {
                        for &i in i_num {
                            value -= lam(i) / m_num;
                            gradient[at(i, t, num, den)] -= 1.0 / m_num;
                        }
                        constraint(gamma, &mut value, &mut gradient);
                    }
                    DreKind::Lllr => {
                        let total = m_num + m_den;
                        if total == 0.0 {
                            continue;
                        }
                        for &i in i_den {
                            let s = sigmoid(lam(i));
                            value += s / total;
                            gradient[at(i, t, num, den)] += s * (1.0 - s) / total;
                        }
                        for &i in i_num {
                            let s = sigmoid(lam(i));
                            value += (1.0 - s) / total;
                            gradient[at(i, t, num, den)] -= s * (1.0 - s) / total;
                        }
                    }
                }
            }
        }
    }
    Ok(LossOutput { value, gradient })
}
