//! Audio-to-feature frontend.
//!
//! 16 kHz PCM is turned into 64-bin log-mel energies (25 ms Hann window,
//! 10 ms hop), stacked three frames at a time into 192-dim vectors at a
//! 30 ms advance (one stream per offset 0, 1, 2), mean-normalized with a
//! causal per-speaker running estimate and finally scaled by global
//! mean/variance statistics. Speakers are assigned to extraction shards
//! with a stable 64-bit FNV-1a hash.

mod io;
mod logmel;
mod norm;
mod shard;
mod stack;

pub use io::{read_feature_file, FeatureFile, FeatureFileWriter, FEATURE_MAGIC, FEATURE_VERSION};
pub use logmel::{hz_to_mel, logmel, mel_to_hz, LogMel, MelConfig};
pub use norm::{
    apply_mvn, compute_global_stats, CausalMeanNormalizer, NormStats, StatsAccumulator,
    VARIANCE_FLOOR,
};
pub use shard::{fnv1a64, shard_by_speaker};
pub use stack::{stack_labels, stack_subsample, FeatureSequence};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const MEL_BINS: usize = 64;
pub const STACK: usize = 3;
/// Default weight, in frames, of the global-mean prior in causal mean subtraction.
pub const DEFAULT_PRIOR_WEIGHT: f64 = 100.0;

/// One recorded utterance.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    /// Monotonic ordering key within a speaker.
    pub timestamp: u64,
    pub samples: Vec<f32>,
}
