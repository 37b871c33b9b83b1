//! Semi-supervised acoustic-model training at desk scale.
//!
//! A bidirectional LSTM teacher is trained on a small labeled corpus, its
//! top-k logits are stored compactly for a large unlabeled pool, and a
//! unidirectional student is trained on the reconstructed soft targets with
//! labeled passes interleaved between unlabeled sub-epochs. Training runs
//! over a deterministic simulated worker pool using either gradient threshold
//! compression or blockwise model-update filtering.
//!
//! Modules:
//! - [`nncore`]: tensors, LSTM/linear model, softmax cross-entropy, BPTT.
//! - [`featpipe`]: log-mel frontend, stacking, causal mean and global MVN, sharding.
//! - [`targetstore`]: top-k selection, reconstruction, and the binary store.
//! - [`distopt`]: worker pool, GTC and BMUF protocols, the training driver.
//! - [`schedule`]: scheduled-learning plans and learning-rate decay.

pub mod distopt;
pub mod error;
pub mod featpipe;
pub mod nncore;
pub mod schedule;
pub mod targetstore;

pub use error::{Error, Result};
