//! Distributed SGD over a simulated worker pool.
//!
//! Workers are threads inside one process (or a round-robin loop in the
//! single-threaded reference mode). Every exchange happens at a barrier and
//! reductions run in worker-index order, so a run is bit-reproducible for a
//! given seed, worker count and protocol, in either execution mode.

mod bmuf;
mod gtc;
mod pool;
mod trainer;

pub use bmuf::{BmufConfig, BmufState};
pub use gtc::{compress, GtcConfig, GtcMessage, GtcState, Quantization, DEFAULT_TAU};
pub use pool::{minibatch_gradient, ExecMode, RoundReport, Sample, WorkerPool};
pub use trainer::{
    evaluate, evaluate_sequence, run_training, write_metrics_csv, EvalSummary, MetricsRow,
    Protocol, TrainOutcome, TrainerConfig, TrainingData, DEFAULT_BATCH_SIZE, METRICS_HEADER,
};
