//! Density ratio matrix estimation losses with analytic gradients.
//!
//! LLR losses read a batch of [`LlrMatrixSeries`] (one per sequence) and return
//! the gradient with respect to every stored entry `λ̂_kl(t)`, laid out
//! sequence-major as `[i][t][k][l]`. Entries are treated as independent
//! inputs; [`LossOutput::score_gradient`] folds the result onto per-class
//! log-scores for estimators that produce `λ̂_kl = L_k − L_l`.
//!
//! Absent classes in a mini-batch are skipped: sums over an empty index set
//! contribute nothing, and the outer `1/K` of class-balanced losses becomes
//! `1/|present classes|`.

mod dre;
mod guess;
mod logistic;
mod lsel;
mod multiplet;

pub use dre::{binary_dre_suite, DreKind};
pub use guess::{
    effective_number_costs, gradient_scales, is_guess_averse_sample, nga_lsel, sample_loss,
    GradientScales, SampleLossKind,
};
pub use logistic::{logistic_family, LogisticMode};
pub use lsel::{clsel, lscel, lsel, mod_lsel};
pub use multiplet::multiplet;

use serde::{Deserialize, Serialize};

use crate::domain::{ClassPriorStats, CostMatrix, Labels, LlrMatrixSeries};
use crate::error::{invalid, Error, Result};

/// Loss value and its gradient with respect to the loss input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl LossOutput {
    /// Folds an LLR-entry gradient onto per-class scores:
    /// `∂L/∂L_k = Σ_l (∂L/∂λ_kl − ∂L/∂λ_lk)`. Output layout `[i][t][k]`.
    pub fn score_gradient(&self, classes: usize) -> Vec<f64> {
        let kk = classes * classes;
        let mut out = vec![0.0; self.gradient.len() / classes];
        for (block, dst) in self.gradient.chunks_exact(kk).zip(out.chunks_exact_mut(classes)) {
            for k in 0..classes {
                for l in 0..classes {
                    let g = block[k * classes + l];
                    dst[k] += g;
                    dst[l] -= g;
                }
            }
        }
        out
    }
}

/// Shape checks shared by all LLR losses. Returns `(T, K)`.
pub(crate) fn check_batch(llrs: &[LlrMatrixSeries], labels: &Labels) -> Result<(usize, usize)> {
    if llrs.len() != labels.len() {
        return invalid(format!(
            "{} LLR series for {} labels",
            llrs.len(),
            labels.len()
        ));
    }
    if labels.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    let len = llrs[0].len();
    let classes = llrs[0].num_classes();
    if classes != labels.num_classes() {
        return invalid("class count mismatch between LLRs and labels");
    }
    if len == 0 || llrs.iter().any(|s| s.len() != len || s.num_classes() != classes) {
        return invalid("all LLR series must share a positive length and class count");
    }
    Ok((len, classes))
}

/// LLR-loss selection for training, with weights resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum LlrLoss {
    Lsel,
    ModLsel,
    Clsel(CostMatrix),
    Lscel(CostMatrix),
    Logistic,
    ModLogistic,
    CLogistic(CostMatrix),
    LogisticC(CostMatrix),
    Dre(DreKind),
}

impl LlrLoss {
    pub fn evaluate(&self, llrs: &[LlrMatrixSeries], labels: &Labels) -> Result<LossOutput> {
        match self {
            LlrLoss::Lsel => lsel(llrs, labels),
            LlrLoss::ModLsel => mod_lsel(llrs, labels, &ClassPriorStats::from_labels(labels)),
            LlrLoss::Clsel(c) => clsel(llrs, labels, c),
            LlrLoss::Lscel(c) => lscel(llrs, labels, c),
            LlrLoss::Logistic => logistic_family(llrs, labels, LogisticMode::Plain),
            LlrLoss::ModLogistic => logistic_family(
                llrs,
                labels,
                LogisticMode::Prior(&ClassPriorStats::from_labels(labels)),
            ),
            LlrLoss::CLogistic(c) => logistic_family(llrs, labels, LogisticMode::CostOuter(c)),
            LlrLoss::LogisticC(c) => logistic_family(llrs, labels, LogisticMode::CostInner(c)),
            LlrLoss::Dre(kind) => binary_dre_suite(llrs, labels, *kind),
        }
    }
}

/// Serializable loss choice; cost-sensitive kinds carry the effective-number
/// `β` used to build their costs from training-set class counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LlrLossKind {
    Lsel,
    ModLsel,
    Clsel { beta: f64 },
    Lscel { beta: f64 },
    Logistic,
    ModLogistic,
    CLogistic { beta: f64 },
    LogisticC { beta: f64 },
    Lsif,
    LsifWithConstraint { gamma: f64 },
    Dskl,
    Barr { gamma: f64 },
    Lllr,
}

impl LlrLossKind {
    /// Resolves cost matrices against the training-set class counts.
    pub fn resolve(&self, counts: &[usize]) -> Result<LlrLoss> {
        Ok(match *self {
            LlrLossKind::Lsel => LlrLoss::Lsel,
            LlrLossKind::ModLsel => LlrLoss::ModLsel,
            LlrLossKind::Clsel { beta } => LlrLoss::Clsel(effective_number_costs(counts, beta)?),
            LlrLossKind::Lscel { beta } => LlrLoss::Lscel(effective_number_costs(counts, beta)?),
            LlrLossKind::Logistic => LlrLoss::Logistic,
            LlrLossKind::ModLogistic => LlrLoss::ModLogistic,
            LlrLossKind::CLogistic { beta } => {
                LlrLoss::CLogistic(effective_number_costs(counts, beta)?)
            }
            LlrLossKind::LogisticC { beta } => {
                LlrLoss::LogisticC(effective_number_costs(counts, beta)?)
            }
            LlrLossKind::Lsif => LlrLoss::Dre(DreKind::Lsif),
            LlrLossKind::LsifWithConstraint { gamma } => {
                LlrLoss::Dre(DreKind::LsifWithConstraint { gamma })
            }
            LlrLossKind::Dskl => LlrLoss::Dre(DreKind::Dskl),
            LlrLossKind::Barr { gamma } => LlrLoss::Dre(DreKind::Barr { gamma }),
            LlrLossKind::Lllr => LlrLoss::Dre(DreKind::Lllr),
        })
    }

    /// Short lowercase name used in configs and CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            LlrLossKind::Lsel => "lsel",
            LlrLossKind::ModLsel => "modlsel",
            LlrLossKind::Clsel { .. } => "clsel",
            LlrLossKind::Lscel { .. } => "lscel",
            LlrLossKind::Logistic => "logistic",
            LlrLossKind::ModLogistic => "modlogistic",
            LlrLossKind::CLogistic { .. } => "clogistic",
            LlrLossKind::LogisticC { .. } => "logisticc",
            LlrLossKind::Lsif => "lsif",
            LlrLossKind::LsifWithConstraint { .. } => "lsifwc",
            LlrLossKind::Dskl => "dskl",
            LlrLossKind::Barr { .. } => "barr",
            LlrLossKind::Lllr => "lllr",
        }
    }

    /// Parses a name produced by [`name`](Self::name). `beta` and `gamma`
    /// fill the parameters of kinds that need them.
    pub fn parse(name: &str, beta: f64, gamma: f64) -> Result<Self> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "lsel" => LlrLossKind::Lsel,
            "modlsel" => LlrLossKind::ModLsel,
            "clsel" => LlrLossKind::Clsel { beta },
            "lscel" => LlrLossKind::Lscel { beta },
            "logistic" => LlrLossKind::Logistic,
            "modlogistic" => LlrLossKind::ModLogistic,
            "clogistic" | "c-logistic" => LlrLossKind::CLogistic { beta },
            "logisticc" | "logistic-c" => LlrLossKind::LogisticC { beta },
            "lsif" => LlrLossKind::Lsif,
            "lsifwc" => LlrLossKind::LsifWithConstraint { gamma },
            "dskl" => LlrLossKind::Dskl,
            "barr" => LlrLossKind::Barr { gamma },
            "lllr" => LlrLossKind::Lllr,
            other => return invalid(format!("unknown loss kind `{other}`")),
        })
    }

    /// Every kind, with the given parameters where needed.
    pub fn all(beta: f64, gamma: f64) -> Vec<Self> {
        [
            "lsel",
            "modlsel",
            "clsel",
            "lscel",
            "logistic",
            "modlogistic",
            "clogistic",
            "logisticc",
            "lsif",
            "lsifwc",
            "dskl",
            "barr",
            "lllr",
        ]
        .iter()
        .map(|n| Self::parse(n, beta, gamma).expect("known name"))
        .collect()
    }
}
