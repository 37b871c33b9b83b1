//! Block-wise model-update filtering.
//!
//! Workers run plain SGD for a block of minibatches from a common start
//! point. The averaged model gives a block gradient `G`, which is filtered
//! through block momentum before it moves the global model.

use serde::{Deserialize, Serialize};

use crate::nncore::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmufConfig {
    /// Minibatches each worker processes between synchronizations.
    pub block_size: usize,
    /// Block momentum; `None` means `1 - 1/N`.
    #[serde(default)]
    pub block_momentum: Option<f64>,
    #[serde(default = "one")]
    pub block_lr: f64,
    #[serde(default = "yes")]
    pub nesterov: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl BmufConfig {
    pub fn new(block_size: usize) -> Self {
        BmufConfig {
            block_size,
            block_momentum: None,
            block_lr: 1.0,
            nesterov: true,
        }
    }

    pub fn momentum_for(&self, workers: usize) -> f64 {
        self.block_momentum.unwrap_or(1.0 - 1.0 / workers as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::invalid("block size must be at least 1"));
        }
        if let Some(m) = self.block_momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::invalid(format!(
                    "block momentum must be in [0, 1), got {m}"
                )));
            }
        }
        if !(self.block_lr > 0.0 && self.block_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "block learning rate must be positive, got {}",
                self.block_lr
            )));
        }
        Ok(())
    }
}

/// Global model, filtered update and filter settings.
#[derive(Clone, Debug, PartialEq)]
pub struct BmufState<S> {
    pub global: Vec<S>,
    pub delta: Vec<S>,
    pub momentum: S,
    pub block_lr: S,
    pub block_size: usize,
    pub nesterov: bool,
}

impl<S: Scalar> BmufState<S> {
    pub fn new(config: &BmufConfig, workers: usize, initial: &[S]) -> Result<Self> {
        config.validate()?;
        if workers == 0 {
            return Err(Error::invalid("need at least one worker"));
        }
        Ok(BmufState {
            global: initial.to_vec(),
            delta: vec![S::zero(); initial.len()],
            momentum: S::of(config.momentum_for(workers)),
            block_lr: S::of(config.block_lr),
            block_size: config.block_size,
            nesterov: config.nesterov,
        })
    }

    /// Folds one block into the global model.
    ///
    /// `start` is the model broadcast at the start of the block and `mean`
    /// the average of the worker models at its end. Returns the start point
    /// for the next block.
    pub fn apply_block(&mut self, start: &[S], mean: &[S]) -> Result<Vec<S>> {
        let n = self.global.len();
        if start.len() != n || mean.len() != n {
            return Err(Error::shape(format!(
                "block models have {} and {} entries, global {n}",
                start.len(),
                mean.len()
            )));
        }
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let g = mean[i] - start[i];
            let d = self.momentum * self.delta[i] + self.block_lr * g;
            // Same value as global + d, grouped so that zero momentum with
            // unit block rate returns the worker average bit for bit.
            let w = mean[i] + ((self.global[i] - start[i]) + (d - g));
            if !(w.is_finite() && d.is_finite()) {
                return Err(Error::NonFinite("block update"));
            }
            self.delta[i] = d;
            self.global[i] = w;
            next.push(if self.nesterov {
                w + self.momentum * d
            } else {
                w
            });
        }
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(momentum: f64, nesterov: bool, init: &[f64]) -> BmufState<f64> {
        let cfg = BmufConfig {
            block_size: 1,
            block_momentum: Some(momentum),
            block_lr: 1.0,
            nesterov,
        };
        BmufState::new(&cfg, 2, init).unwrap()
    }

    #[test]
    fn zero_momentum_returns_average() {
        let mut st = state(0.0, true, &[0.1, 0.2, 0.3]);
        let mean = [0.7, -1.3, 0.30000000000000004];
        let next = st.apply_block(&[0.1, 0.2, 0.3], &mean).unwrap();
        assert_eq!(next, mean.to_vec());
        assert_eq!(st.global, mean.to_vec());
    }

    #[test]
    fn two_block_momentum_recurrence() {
        let mut st = state(0.5, false, &[1.0]);
        // block 1 moves the average by G1 = 0.5
        let s1 = st.apply_block(&[1.0], &[1.5]).unwrap();
        assert_eq!(st.delta, vec![0.5]);
        assert_eq!(s1, vec![1.5]);
        // block 2 moves by G2 = 0.25: delta = 0.5*G1 + G2
        let s2 = st.apply_block(&s1, &[1.75]).unwrap();
        assert_eq!(st.delta, vec![0.5]);
        assert_eq!(s2, vec![2.0]);
        // displacement 1.5*G1 + G2
        assert_eq!(st.global[0] - 1.0, 1.5 * 0.5 + 0.25);
    }

    #[test]
    fn nesterov_start_looks_ahead() {
        let mut st = state(0.5, true, &[0.0]);
        let s1 = st.apply_block(&[0.0], &[1.0]).unwrap();
        assert_eq!(st.global, vec![1.0]);
        assert_eq!(s1, vec![1.5]);
        // from the look-ahead start, a block with zero progress keeps momentum going
        let s2 = st.apply_block(&s1, &s1).unwrap();
        assert_eq!(st.delta, vec![0.5]);
        assert_eq!(st.global, vec![1.5]);
        assert_eq!(s2, vec![1.75]);
    }

    #[test]
    fn default_momentum_depends_on_workers() {
        let cfg = BmufConfig::new(4);
        assert_eq!(cfg.momentum_for(4), 0.75);
        assert_eq!(cfg.momentum_for(1), 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(BmufConfig {
            block_size: 0,
            ..BmufConfig::new(1)
        }
        .validate()
        .is_err());
        assert!(BmufConfig {
            block_momentum: Some(1.0),
            ..BmufConfig::new(1)
        }
        .validate()
        .is_err());
        assert!(BmufConfig {
            block_lr: 0.0,
            ..BmufConfig::new(1)
        }
        .validate()
        .is_err());
    }
}
