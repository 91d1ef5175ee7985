//! Early multiclass classification of time series through log-likelihood
//! ratio (LLR) matrix estimation and the matrix sequential probability ratio
//! test (MSPRT).
//!
//! The crate is organised bottom-up:
//!
//! * [`domain`] holds the shared value types (sequence batches, LLR matrix
//!   series, posterior series, thresholds and costs).
//! * [`oracle`] provides Gaussian sequence sources with closed-form LLRs.
//! * [`tandem`] turns windowed posteriors into LLR matrices.
//! * [`losses`] is the density-ratio-matrix loss suite with analytic gradients.
//! * [`model`] is a small recurrent temporal integrator trained by hand-written
//!   backpropagation and AdamW.
//! * [`msprt`] runs the sequential and fixed-time decision rules.
//! * [`eval`] computes metrics, speed-accuracy curves and the Monte Carlo
//!   experiment harnesses.

pub mod domain;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod msprt;
pub mod numeric;
pub mod oracle;
pub mod tandem;

pub use domain::{
    antisymmetrize, min_rival_margin, validate_cost_matrix, ClassPriorStats, CostMatrix,
    CostViolation, Decision, Labels, LlrMatrixSeries, PosteriorSeries, ScoreSeries, ScoreVector,
    SequenceBatch, ThresholdMatrix, POSTERIOR_FLOOR,
};
pub use error::{Error, Result};
