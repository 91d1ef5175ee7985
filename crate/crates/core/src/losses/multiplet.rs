//! Multiplet cross-entropy over sliding windows of length `1..=N+1`.

use super::LossOutput;
use crate::domain::{Labels, PosteriorSeries, POSTERIOR_FLOOR};
use crate::error::{invalid, Error, Result};

/// `(1/M) Σ_i Σ_{w=1}^{N+1} Σ_t −log p̂(y_i | window of length w ending at t)`,
/// where each window length uses the same number `T − N` of end points.
///
/// The gradient is taken with respect to the logits behind each stored
/// posterior (`p − onehot(y)`), in the [`PosteriorSeries`] slot layout
/// `[i][t][w−1][k]`. Windows whose true-class probability sits on the floor
/// get zero gradient, matching the clamp in the forward value.
pub fn multiplet(posteriors: &[PosteriorSeries], labels: &Labels, order: usize) -> Result<LossOutput> {
    if posteriors.len() != labels.len() {
        return invalid("posterior and label counts differ");
    }
    if posteriors.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    let (len, width, k) = (
        posteriors[0].len(),
        posteriors[0].max_window(),
        posteriors[0].num_classes(),
    );
    if posteriors
        .iter()
        .any(|p| p.len() != len || p.max_window() != width || p.num_classes() != k)
    {
        return invalid("posterior series differ in shape");
    }
    if k != labels.num_classes() {
        return invalid("class count mismatch");
    }
    if order + 1 > width || order + 1 > len {
        return invalid(format!(
            "order {order} needs windows of length {} within T={len}, stored max {width}",
            order + 1
        ));
    }
    let per_seq = len * width * k;
    let scale = 1.0 / posteriors.len() as f64;
    let floor = POSTERIOR_FLOOR.ln();
    let mut gradient = vec![0.0; posteriors.len() * per_seq];
    let mut value = 0.0;
    for (i, (post, &y)) in posteriors.iter().zip(labels.as_slice()).enumerate() {
        for w in 1..=order + 1 {
            for end in (w - 1)..=(len + w - order - 2) {
                let lp = post.log_probs(end, w)?;
                value -= scale * lp[y];
                if lp[y] <= floor {
                    continue;
                }
                let off = i * per_seq + (end * width + w - 1) * k;
                for (c, &l) in lp.iter().enumerate() {
                    let target = if c == y { 1.0 } else { 0.0 };
                    gradient[off + c] += scale * (l.exp() - target);
                }
            }
        }
    }
    Ok(LossOutput { value, gradient })
}
