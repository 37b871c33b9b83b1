use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::ce_loss_scaled;
use super::lstm::{backward_from_logits, forward_cached};
use super::{ModelParams, Scalar, Targets, Tensor};
use crate::{Error, Result};

/// Gradient of the mean cross-entropy of one sequence.
#[derive(Clone, Debug)]
pub struct Gradient<S> {
    pub loss: S,
    pub scored: usize,
    pub grad: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct ChunkGradient<S> {
    /// Frame range of the source sequence covered by this chunk.
    pub range: Range<usize>,
    pub loss: S,
    pub scored: usize,
    pub grad: Vec<S>,
}

/// Adds `scale * d(sum of frame CE)/d(params)` into `grad` and returns the
/// scaled summed loss and the number of scored frames.
pub fn accumulate_gradient<S: Scalar>(
    model: &ModelParams<S>,
    features: &Tensor<S>,
    targets: &Targets<S>,
    scale: S,
    grad: &mut [S],
) -> Result<(S, usize)> {
    if grad.len() != model.num_params() {
        return Err(Error::shape(format!(
            "gradient buffer has {} entries, model {}",
            grad.len(),
            model.num_params()
        )));
    }
    let cache = forward_cached(model, features)?;
    let out = ce_loss_scaled(&cache.logits, targets, model.spec().lookahead_frames, scale)?;
    backward_from_logits(model, &cache, out.grad.data(), grad);
    Ok((out.loss, out.scored))
}

/// Full-sequence BPTT: gradient of the per-frame mean loss over the whole utterance.
pub fn backward_full<S: Scalar>(
    model: &ModelParams<S>,
    features: &Tensor<S>,
    targets: &Targets<S>,
) -> Result<Gradient<S>> {
    let scored = features
        .rows()
        .saturating_sub(model.spec().lookahead_frames);
    let scale = if scored == 0 {
        S::zero()
    } else {
        S::one() / S::of(scored as f64)
    };
    let mut grad = vec![S::zero(); model.num_params()];
    let (loss, scored) = accumulate_gradient(model, features, targets, scale, &mut grad)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("backward"));
    }
    Ok(Gradient { loss, scored, grad })
}

/// Consecutive `chunk_len` frame ranges covering `0..steps`; the last may be shorter.
pub fn chunk_ranges(steps: usize, chunk_len: usize) -> Result<Vec<Range<usize>>> {
    if chunk_len == 0 {
        return Err(Error::invalid("chunk_len must be at least 1"));
    }
    Ok((0..steps)
        .step_by(chunk_len)
        .map(|s| s..(s + chunk_len).min(steps))
        .collect())
}

/// Chunked BPTT. Each chunk is an independent sequence starting from zero
/// recurrent state; chunks are returned in a seeded random order.
pub fn backward_chunked<S: Scalar>(
    model: &ModelParams<S>,
    features: &Tensor<S>,
    targets: &Targets<S>,
    chunk_len: usize,
    seed: u64,
) -> Result<Vec<ChunkGradient<S>>> {
    if targets.len() != features.rows() {
        return Err(Error::shape(format!(
            "{} targets for {} frames",
            targets.len(),
            features.rows()
        )));
    }
    let mut ranges = chunk_ranges(features.rows(), chunk_len)?;
    ranges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ranges
        .into_iter()
        .map(|range| {
            let g = backward_full(
                model,
                &features.slice_rows(range.clone()),
                &targets.slice(range.clone()),
            )?;
            Ok(ChunkGradient {
                range,
                loss: g.loss,
                scored: g.scored,
                grad: g.grad,
            })
        })
        .collect()
}

/// `params <- params - lr * grad`. The model is left untouched on error.
pub fn sgd_step<S: Scalar>(model: &mut ModelParams<S>, grad: &[S], lr: S) -> Result<()> {
    if !(lr > S::zero()) {
        return Err(Error::invalid(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if grad.len() != model.num_params() {
        return Err(Error::shape(format!(
            "gradient has {} entries, model {}",
            grad.len(),
            model.num_params()
        )));
    }
    let updated: Vec<S> = model
        .params()
        .iter()
        .zip(grad)
        .map(|(&p, &g)| p - lr * g)
        .collect();
    if updated.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sgd_step"));
    }
    model.params_mut().copy_from_slice(&updated);
    Ok(())
}
