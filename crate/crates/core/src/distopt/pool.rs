use std::thread;

use serde::{Deserialize, Serialize};

use super::bmuf::BmufState;
use super::gtc::{compress, GtcConfig, GtcMessage, GtcState};
use crate::nncore::{accumulate_gradient, sgd_step, ModelParams, Scalar, Targets, Tensor};
use crate::{Error, Result};

/// One training unit: a whole utterance or one BPTT chunk of it.
#[derive(Clone, Debug)]
pub struct Sample<S> {
    pub features: Tensor<S>,
    pub targets: Targets<S>,
}

impl<S: Scalar> Sample<S> {
    pub fn new(features: Tensor<S>, targets: Targets<S>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::shape(format!(
                "{} feature frames but {} target frames",
                features.rows(),
                targets.len()
            )));
        }
        Ok(Sample { features, targets })
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

/// Gradient of the mean frame cross-entropy over a minibatch.
///
/// Returns the gradient, the summed (unscaled) loss and the number of scored
/// frames. A minibatch with no scored frames has a zero gradient.
pub fn minibatch_gradient<S: Scalar>(
    model: &ModelParams<S>,
    batch: &[&Sample<S>],
) -> Result<(Vec<S>, S, usize)> {
    let lookahead = model.spec().lookahead_frames;
    let total: usize = batch
        .iter()
        .map(|s| s.frames().saturating_sub(lookahead))
        .sum();
    let mut grad = vec![S::zero(); model.num_params()];
    if total == 0 {
        return Ok((grad, S::zero(), 0));
    }
    let scale = S::one() / S::of(total as f64);
    let mut loss = S::zero();
    for s in batch {
        let (l, _) = accumulate_gradient(model, &s.features, &s.targets, scale, &mut grad)?;
        loss += l;
    }
    Ok((grad, loss * S::of(total as f64), total))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// One OS thread per worker for the compute part of each round.
    #[default]
    Threaded,
    /// Workers run one after another on the calling thread.
    Sequential,
}

struct Worker<S> {
    replica: ModelParams<S>,
    gtc: GtcState<S>,
}

/// Loss and traffic of one synchronization round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub loss_sum: f64,
    pub scored_frames: usize,
    /// Non-zero elements sent by each worker (GTC only).
    pub sent: Vec<usize>,
}

/// A set of workers, each holding a model replica and a compression residual.
pub struct WorkerPool<S> {
    workers: Vec<Worker<S>>,
    mode: ExecMode,
    check_replicas: bool,
}

impl<S: Scalar> WorkerPool<S> {
    pub fn new(model: &ModelParams<S>, workers: usize, mode: ExecMode) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("need at least one worker"));
        }
        let n = model.num_params();
        Ok(WorkerPool {
            workers: (0..workers)
                .map(|_| Worker {
                    replica: model.clone(),
                    gtc: GtcState::new(n),
                })
                .collect(),
            mode,
            check_replicas: cfg!(debug_assertions),
        })
    }

    /// Turns the replica agreement check at each barrier on or off. On by
    /// default in debug builds.
    pub fn with_replica_check(mut self, on: bool) -> Self {
        self.check_replicas = on;
        self
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    /// Replica of worker 0, which equals every other replica between rounds.
    pub fn model(&self) -> &ModelParams<S> {
        &self.workers[0].replica
    }

    pub fn residual(&self, worker: usize) -> &[S] {
        &self.workers[worker].gtc.residual
    }

    /// Overwrites every replica.
    pub fn broadcast(&mut self, params: &[S]) -> Result<()> {
        if params.len() != self.model().num_params() {
            return Err(Error::shape(format!(
                "broadcast of {} values into {}-parameter replicas",
                params.len(),
                self.model().num_params()
            )));
        }
        for w in &mut self.workers {
            w.replica.params_mut().copy_from_slice(params);
        }
        Ok(())
    }

    fn verify_replicas(&self) -> Result<()> {
        if !self.check_replicas {
            return Ok(());
        }
        let first = self.workers[0].replica.params();
        for (i, w) in self.workers.iter().enumerate().skip(1) {
            let same = w
                .replica
                .params()
                .iter()
                .zip(first)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits());
            if !same {
                return Err(Error::ReplicaDivergence(i));
            }
        }
        Ok(())
    }

    fn map_workers<T, F>(&mut self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut Worker<S>) -> Result<T> + Sync,
    {
        match self.mode {
            ExecMode::Sequential => self
                .workers
                .iter_mut()
                .enumerate()
                .map(|(i, w)| f(i, w))
                .collect(),
            ExecMode::Threaded => {
                let f = &f;
                let outs: Vec<Result<T>> = thread::scope(|scope| {
                    let handles: Vec<_> = self
                        .workers
                        .iter_mut()
                        .enumerate()
                        .map(|(i, w)| scope.spawn(move || f(i, w)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                        .collect()
                });
                outs.into_iter().collect()
            }
        }
    }

    /// One GTC round: each worker computes the gradient of its minibatch,
    /// compresses it, and every replica applies `-lr` times the sum of the
    /// messages.
    pub fn gtc_round(
        &mut self,
        batches: &[Vec<&Sample<S>>],
        lr: S,
        config: &GtcConfig,
    ) -> Result<RoundReport> {
        self.gtc_round_messages(batches, lr, config)
            .map(|(report, _)| report)
    }

    /// Like [`gtc_round`](Self::gtc_round) but also returns every worker's message.
    pub fn gtc_round_messages(
        &mut self,
        batches: &[Vec<&Sample<S>>],
        lr: S,
        config: &GtcConfig,
    ) -> Result<(RoundReport, Vec<GtcMessage<S>>)> {
        self.check_batches(batches.len())?;
        self.verify_replicas()?;
        let results = self.map_workers(|i, w| {
            let (grad, loss, frames) = minibatch_gradient(&w.replica, &batches[i])?;
            let msg = compress(&mut w.gtc, &grad, config)?;
            Ok((msg, loss, frames))
        })?;
        let n = self.model().num_params();
        let mut total = vec![S::zero(); n];
        let mut report = RoundReport {
            loss_sum: 0.0,
            scored_frames: 0,
            sent: Vec::new(),
        };
        let mut msgs = Vec::with_capacity(results.len());
        for (msg, loss, frames) in results {
            msg.add_to(&mut total);
            report.loss_sum += loss.as_f64();
            report.scored_frames += frames;
            report.sent.push(msg.nnz());
            msgs.push(msg);
        }
        let mut next = self.workers[0].replica.clone();
        sgd_step(&mut next, &total, lr)?;
        self.broadcast(next.params())?;
        Ok((report, msgs))
    }

    /// One BMUF block: each worker runs local SGD over its list of
    /// minibatches, then the averaged model is filtered into `state` and the
    /// next start point is broadcast.
    pub fn bmuf_block(
        &mut self,
        blocks: &[Vec<Vec<&Sample<S>>>],
        lr: S,
        state: &mut BmufState<S>,
    ) -> Result<RoundReport> {
        self.check_batches(blocks.len())?;
        self.verify_replicas()?;
        let start = self.workers[0].replica.params().to_vec();
        let results = self.map_workers(|i, w| {
            let mut loss = S::zero();
            let mut frames = 0;
            for batch in &blocks[i] {
                let (grad, l, f) = minibatch_gradient(&w.replica, batch)?;
                if f > 0 {
                    sgd_step(&mut w.replica, &grad, lr)?;
                }
                loss += l;
                frames += f;
            }
            Ok((loss, frames))
        })?;
        let inv = S::one() / S::of(self.workers.len() as f64);
        let mut mean = vec![S::zero(); start.len()];
        for w in &self.workers {
            for (m, &p) in mean.iter_mut().zip(w.replica.params()) {
                *m += p;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv);
        let next = state.apply_block(&start, &mean)?;
        self.broadcast(&next)?;
        let mut report = RoundReport {
            loss_sum: 0.0,
            scored_frames: 0,
            sent: Vec::new(),
        };
        for (loss, frames) in results {
            report.loss_sum += loss.as_f64();
            report.scored_frames += frames;
        }
        Ok(report)
    }

    fn check_batches(&self, got: usize) -> Result<()> {
        if got != self.workers.len() {
            return Err(Error::invalid(format!(
                "{got} worker inputs for {} workers",
                self.workers.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::ModelSpec;

    fn model() -> ModelParams<f64> {
        let spec = ModelSpec {
            input_dim: 2,
            layer_sizes: vec![3],
            num_outputs: 2,
            bidirectional: false,
            lookahead_frames: 1,
        };
        ModelParams::init(spec, 1).unwrap()
    }

    #[test]
    fn diverged_replica_is_reported() {
        let mut pool = WorkerPool::new(&model(), 3, ExecMode::Sequential)
            .unwrap()
            .with_replica_check(true);
        pool.workers[2].replica.params_mut()[0] += 1e-12;
        let err = pool
            .gtc_round(&[vec![], vec![], vec![]], 0.1, &GtcConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::ReplicaDivergence(2)), "{err}");
    }

    #[test]
    fn worker_count_must_match_inputs() {
        let mut pool = WorkerPool::new(&model(), 2, ExecMode::Sequential).unwrap();
        assert!(pool
            .gtc_round(&[vec![]], 0.1, &GtcConfig::default())
            .is_err());
    }

    #[test]
    fn short_sequences_contribute_nothing() {
        let s = Sample::new(Tensor::zeros(&[1, 2]), Targets::Hard(vec![0])).unwrap();
        let (g, loss, frames) = minibatch_gradient(&model(), &[&s]).unwrap();
        assert_eq!(frames, 0);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
