//! Compressed teacher targets.
//!
//! Only the `k` largest logits of each frame are kept (default 20). At
//! training time the full logit vector is rebuilt by filling the missing
//! classes with a large negative constant, so the reconstructed posterior
//! is the teacher posterior renormalized onto the kept support.

mod store;
mod topk;

pub use store::{
    merge_stores, record_payload_bytes, TargetStoreReader, TargetStoreWriter, ENC_F32, STORE_MAGIC,
    STORE_VERSION, TRAILER_MAGIC,
};
pub use topk::{generate_targets, reconstruct, select_topk, soft_targets, TopKTargetRecord};

pub const DEFAULT_K: usize = 20;
/// Logit used for classes that were not stored.
pub const DEFAULT_FILL: f32 = -1e4;
