use std::ops::Range;

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place<S: Scalar>(v: &mut [S]) {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<S>().ln() + max;
    logits.iter().map(|&x| x - lse).collect()
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy<S: Scalar>(p: &[S]) -> S {
    p.iter()
        .filter(|&&q| q > S::zero())
        .map(|&q| -q * q.ln())
        .sum()
}

/// Per-frame training targets: class indices or probability rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets<S> {
    Hard(Vec<usize>),
    Soft(Tensor<S>),
}

impl<S: Scalar> Targets<S> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(l) => l.len(),
            Targets::Soft(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, range: Range<usize>) -> Targets<S> {
        match self {
            Targets::Hard(l) => Targets::Hard(l[range].to_vec()),
            Targets::Soft(t) => Targets::Soft(t.slice_rows(range)),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Targets<T> {
        match self {
            Targets::Hard(l) => Targets::Hard(l.clone()),
            Targets::Soft(t) => Targets::Soft(t.cast()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput<S> {
    pub loss: S,
    /// Gradient with respect to the logits, same shape as the logits.
    pub grad: Tensor<S>,
    /// Number of frames that carried a target.
    pub scored: usize,
}

/// Mean cross-entropy over scored frames.
///
/// With look-ahead `L`, logit row `t` is scored against target `t - L`, so
/// the first `L` rows carry no loss. `targets` must have one entry per
/// logit row; the last `L` targets are never used.
pub fn ce_loss<S: Scalar>(
    logits: &Tensor<S>,
    targets: &Targets<S>,
    lookahead: usize,
) -> Result<LossOutput<S>> {
    let scored = logits.rows().saturating_sub(lookahead);
    let scale = if scored == 0 {
        S::zero()
    } else {
        S::one() / S::of(scored as f64)
    };
    ce_loss_scaled(logits, targets, lookahead, scale)
}

/// Cross-entropy summed over scored frames and multiplied by `scale`.
pub(crate) fn ce_loss_scaled<S: Scalar>(
    logits: &Tensor<S>,
    targets: &Targets<S>,
    lookahead: usize,
    scale: S,
) -> Result<LossOutput<S>> {
    let steps = logits.rows();
    let classes = logits.cols();
    if targets.len() != steps {
        return Err(Error::shape(format!(
            "{} targets for {steps} logit rows",
            targets.len()
        )));
    }
    if let Targets::Soft(t) = targets {
        if t.cols() != classes {
            return Err(Error::shape(format!(
                "soft targets have {} classes, logits {classes}",
                t.cols()
            )));
        }
    }
    let mut grad = Tensor::zeros(&[steps, classes]);
    let mut total = S::zero();
    for t in lookahead..steps {
        let src = t - lookahead;
        let row = logits.row(t);
        let logp = log_softmax(row);
        let g = grad.row_mut(t);
        for (gi, &lp) in g.iter_mut().zip(&logp) {
            *gi = lp.exp();
        }
        match targets {
            Targets::Hard(labels) => {
                let y = labels[src];
                if y >= classes {
                    return Err(Error::shape(format!(
                        "label {y} out of range for {classes} classes"
                    )));
                }
                total -= logp[y];
                g[y] -= S::one();
            }
            Targets::Soft(q) => {
                for ((gi, &qi), &lp) in g.iter_mut().zip(q.row(src)).zip(&logp) {
                    if qi != S::zero() {
                        total -= qi * lp;
                    }
                    *gi -= qi;
                }
            }
        }
        for gi in g.iter_mut() {
            *gi *= scale;
        }
    }
    Ok(LossOutput {
        loss: total * scale,
        grad,
        scored: steps.saturating_sub(lookahead),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        assert_eq!(softmax(&[0.0f64; 4]), vec![0.25; 4]);
    }

    #[test]
    fn softmax_two_to_one() {
        for c in [-700.0, -3.0, 0.0, 12.5, 700.0] {
            let p = softmax(&[c, c + 2f64.ln()]);
            assert!(
                (p[0] - 1.0 / 3.0).abs() < 1e-12 && (p[1] - 2.0 / 3.0).abs() < 1e-12,
                "{c}: {p:?}"
            );
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1e30f32, 0.0, -1e30]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn one_hot_on_uniform_logits_costs_ln_d() {
        let d = 7;
        let logits = Tensor::<f64>::zeros(&[1, d]);
        let out = ce_loss(&logits, &Targets::Hard(vec![3]), 0).unwrap();
        assert!((out.loss - (d as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn matching_target_gives_entropy_and_zero_gradient() {
        let row = vec![0.3f64, -1.0, 2.0, 0.5];
        let q = softmax(&row);
        let logits = Tensor::from_rows(&[row]).unwrap();
        let out = ce_loss(
            &logits,
            &Targets::Soft(Tensor::from_rows(std::slice::from_ref(&q)).unwrap()),
            0,
        )
        .unwrap();
        assert!((out.loss - entropy(&q)).abs() < 1e-12);
        assert!(out.grad.data().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn lookahead_shifts_targets() {
        // Row t is scored against target t - 2; rows 0 and 1 carry nothing.
        let logits = Tensor::<f64>::from_vec(vec![4, 3], vec![0.0; 12]).unwrap();
        let out = ce_loss(&logits, &Targets::Hard(vec![1, 2, 99, 99]), 2).unwrap();
        assert_eq!(out.scored, 2);
        assert!(out.grad.row(0).iter().all(|&g| g == 0.0));
        assert!(out.grad.row(1).iter().all(|&g| g == 0.0));
        assert!(out.grad.row(2)[1] < 0.0 && out.grad.row(3)[2] < 0.0);
        // fewer frames than the look-ahead: nothing to score
        let short = Tensor::<f64>::zeros(&[2, 3]);
        let out = ce_loss(&short, &Targets::Hard(vec![0, 0]), 3).unwrap();
        assert_eq!((out.loss, out.scored), (0.0, 0));
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let logits = Tensor::<f32>::zeros(&[3, 4]);
        assert!(ce_loss(&logits, &Targets::Hard(vec![0, 1]), 0).is_err());
        assert!(ce_loss(&logits, &Targets::Hard(vec![0, 1, 4]), 0).is_err());
        assert!(ce_loss(&logits, &Targets::Soft(Tensor::zeros(&[3, 5])), 0).is_err());
    }
}
