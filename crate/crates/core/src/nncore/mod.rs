//! Minimal numeric core: dense tensors, a stacked LSTM with a linear output
//! layer, softmax cross-entropy against hard or soft targets, and
//! full-sequence or chunked backpropagation through time.
//!
//! Everything is generic over [`Scalar`] so training can run in `f32` while
//! gradient checks run in `f64`.

mod loss;
mod lstm;
mod model;
mod scalar;
mod tensor;
mod train;

pub use loss::{ce_loss, entropy, log_softmax, softmax, softmax_in_place, LossOutput, Targets};
pub use lstm::{forward, forward_cached, ForwardCache};
pub use model::{ModelParams, ModelSpec, ParamSlice, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{
    accumulate_gradient, backward_chunked, backward_full, chunk_ranges, sgd_step, ChunkGradient,
    Gradient,
};
