use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bmuf::{BmufConfig, BmufState};
use super::gtc::GtcConfig;
use super::pool::{ExecMode, Sample, WorkerPool};
use crate::nncore::{ce_loss, chunk_ranges, forward, ModelParams, Scalar, Targets, Tensor};
use crate::schedule::{relative_error_reduction, Phase, PhaseKind, TrainPlan};
use crate::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 16;

pub const METRICS_HEADER: &str =
    "sub_epoch,frames_seen,heldout_ce,heldout_frame_error,relative_error_reduction_vs_baseline";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum Protocol {
    Gtc(GtcConfig),
    Bmuf(BmufConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub workers: usize,
    pub protocol: Protocol,
    /// Units (utterances or chunks) per worker minibatch.
    pub batch_size: usize,
    pub seed: u64,
    pub exec: ExecMode,
    pub check_replicas: bool,
    /// Held-out frame error of the reference model, for the relative
    /// improvement column.
    pub baseline_error: Option<f64>,
}

impl TrainerConfig {
    pub fn new(workers: usize, protocol: Protocol, seed: u64) -> Self {
        TrainerConfig {
            workers,
            protocol,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
            exec: ExecMode::Threaded,
            check_replicas: cfg!(debug_assertions),
            baseline_error: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("need at least one worker"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        match &self.protocol {
            Protocol::Gtc(c) => c.validate(),
            Protocol::Bmuf(c) => c.validate(),
        }
    }
}

/// Everything a plan can draw on.
#[derive(Clone, Debug, Default)]
pub struct TrainingData<S> {
    /// Labeled utterances with hard targets, one list per frame offset.
    pub labeled: Vec<Vec<Sample<S>>>,
    /// Unlabeled utterances with teacher targets. Each unlabeled phase
    /// consumes the next slice.
    pub unlabeled: Vec<Sample<S>>,
    /// Utterances with hard targets used for the metrics rows.
    pub heldout: Vec<Sample<S>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub sub_epoch: usize,
    pub frames_seen: u64,
    pub heldout_ce: f64,
    pub heldout_frame_error: f64,
    pub relative_error_reduction_vs_baseline: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub model: ModelParams<S>,
    /// One row before training and one at the end of every sub-epoch.
    pub metrics: Vec<MetricsRow>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalSummary {
    /// Mean cross-entropy per scored frame.
    pub ce: f64,
    /// Fraction of scored frames whose argmax differs from the label.
    pub frame_error: f64,
    pub frames: usize,
}

/// Summed cross-entropy, error count and scored frame count of one sequence.
pub fn evaluate_sequence<S: Scalar>(
    model: &ModelParams<S>,
    features: &Tensor<S>,
    labels: &[usize],
) -> Result<(f64, usize, usize)> {
    let logits = forward(model, features)?;
    let lookahead = model.spec().lookahead_frames;
    let out = ce_loss(&logits, &Targets::Hard(labels.to_vec()), lookahead)?;
    let mut errors = 0;
    for t in lookahead..logits.rows() {
        let row = logits.row(t);
        let best = (0..row.len())
            .reduce(|a, b| if row[b] > row[a] { b } else { a })
            .unwrap_or(0);
        if best != labels[t - lookahead] {
            errors += 1;
        }
    }
    Ok((out.loss.as_f64() * out.scored as f64, errors, out.scored))
}

pub fn evaluate<S: Scalar>(model: &ModelParams<S>, samples: &[Sample<S>]) -> Result<EvalSummary> {
    let (mut ce, mut errors, mut frames) = (0.0, 0, 0);
    for s in samples {
        let Targets::Hard(labels) = &s.targets else {
            return Err(Error::invalid("evaluation needs hard labels"));
        };
        let (c, e, f) = evaluate_sequence(model, &s.features, labels)?;
        ce += c;
        errors += e;
        frames += f;
    }
    if frames == 0 {
        return Ok(EvalSummary::default());
    }
    Ok(EvalSummary {
        ce: ce / frames as f64,
        frame_error: errors as f64 / frames as f64,
        frames,
    })
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        let rel = r
            .relative_error_reduction_vs_baseline
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.6},{:.6},{}",
            r.sub_epoch, r.frames_seen, r.heldout_ce, r.heldout_frame_error, rel
        )?;
    }
    Ok(())
}

fn units<S: Scalar>(utts: &[Sample<S>], chunk_len: Option<usize>) -> Result<Vec<Sample<S>>> {
    let Some(len) = chunk_len else {
        return Ok(utts.to_vec());
    };
    let mut out = Vec::new();
    for u in utts {
        for r in chunk_ranges(u.frames(), len)? {
            out.push(Sample {
                features: u.features.slice_rows(r.clone()),
                targets: u.targets.slice(r),
            });
        }
    }
    Ok(out)
}

/// Splits the unlabeled pool across the unlabeled phases of the plan.
fn unlabeled_slices(plan: &TrainPlan, pool: &[usize]) -> Result<Vec<std::ops::Range<usize>>> {
    let phases: Vec<&Phase> = plan
        .phases
        .iter()
        .filter(|p| p.kind == PhaseKind::Unlabeled)
        .collect();
    let n = pool.len();
    let mut out = Vec::with_capacity(phases.len());
    let mut cursor = 0;
    for (i, p) in phases.iter().enumerate() {
        let end = match p.budget_frames {
            None => (i + 1) * n / phases.len(),
            Some(budget) => {
                let mut end = cursor;
                let mut frames = 0u64;
                while end < n && (frames < budget || end == cursor) {
                    frames += pool[end] as u64;
                    end += 1;
                }
                end
            }
        };
        if end == cursor {
            return Err(Error::Data(format!(
                "unlabeled data exhausted at sub-epoch {} ({n} utterances for {} unlabeled phases)",
                p.sub_epoch,
                phases.len()
            )));
        }
        out.push(cursor..end);
        cursor = end;
    }
    Ok(out)
}

enum Engine<S> {
    Gtc(GtcConfig),
    Bmuf(BmufState<S>),
}

impl<S: Scalar> Engine<S> {
    fn current<'a>(&'a self, pool: &'a WorkerPool<S>) -> Result<ModelParams<S>> {
        match self {
            Engine::Gtc(_) => Ok(pool.model().clone()),
            Engine::Bmuf(st) => {
                ModelParams::from_vec(pool.model().spec().clone(), st.global.clone())
            }
        }
    }
}

/// Runs a training plan on a pool of workers and returns the final model.
///
/// Within each phase the units (BPTT chunks, or whole utterances for
/// full-sequence phases) are shuffled with a generator derived from the
/// seed and the phase index, then dealt round-robin to the workers. A GTC
/// round consumes one minibatch per worker; a BMUF block consumes
/// `block_size` minibatches per worker.
pub fn run_training<S: Scalar>(
    model: ModelParams<S>,
    plan: &TrainPlan,
    data: &TrainingData<S>,
    config: &TrainerConfig,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    plan.validate()?;
    let unl_frames: Vec<usize> = data.unlabeled.iter().map(Sample::frames).collect();
    let slices = unlabeled_slices(plan, &unl_frames)?;
    let mut next_slice = slices.into_iter();

    let mut pool = WorkerPool::new(&model, config.workers, config.exec)?
        .with_replica_check(config.check_replicas);
    let mut engine = match &config.protocol {
        Protocol::Gtc(c) => Engine::Gtc(*c),
        Protocol::Bmuf(c) => Engine::Bmuf(BmufState::new(c, config.workers, model.params())?),
    };
    let row = |sub_epoch, frames_seen, m: &ModelParams<S>| -> Result<MetricsRow> {
        let ev = evaluate(m, &data.heldout)?;
        Ok(MetricsRow {
            sub_epoch,
            frames_seen,
            heldout_ce: ev.ce,
            heldout_frame_error: ev.frame_error,
            relative_error_reduction_vs_baseline: config
                .baseline_error
                .and_then(|b| relative_error_reduction(b, ev.frame_error).ok()),
        })
    };
    let mut metrics = vec![row(0, 0, &model)?];
    let mut frames_seen = 0u64;

    for (idx, phase) in plan.phases.iter().enumerate() {
        let source: &[Sample<S>] = match phase.kind {
            PhaseKind::Labeled => {
                let off = phase.offset.unwrap_or(0) as usize;
                data.labeled
                    .get(off)
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::Data(format!("no labeled data for frame offset {off}")))?
            }
            PhaseKind::Unlabeled => {
                let r = next_slice.next().expect("one slice per unlabeled phase");
                &data.unlabeled[r]
            }
        };
        let mut units = units(source, phase.chunk_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(idx as u64);
        units.shuffle(&mut rng);
        let n = config.workers;
        if units.len() < n {
            return Err(Error::Data(format!(
                "phase {idx} has {} units for {n} workers",
                units.len()
            )));
        }
        if matches!(engine, Engine::Bmuf(_)) {
            // model averaging assumes equal shards
            units.truncate(units.len() - units.len() % n);
        }
        let shards: Vec<Vec<&Sample<S>>> = (0..n)
            .map(|w| units.iter().skip(w).step_by(n).collect())
            .collect();
        let batches: Vec<Vec<Vec<&Sample<S>>>> = shards
            .iter()
            .map(|s| s.chunks(config.batch_size).map(<[_]>::to_vec).collect())
            .collect();
        let max_batches = batches.iter().map(Vec::len).max().unwrap_or(0);
        let lr = S::of(phase.lr);
        let (mut loss, mut frames) = (0.0, 0usize);
        match &mut engine {
            Engine::Gtc(cfg) => {
                for r in 0..max_batches {
                    let round: Vec<Vec<&Sample<S>>> = batches
                        .iter()
                        .map(|b| b.get(r).cloned().unwrap_or_default())
                        .collect();
                    let rep = pool.gtc_round(&round, lr, cfg)?;
                    loss += rep.loss_sum;
                    frames += rep.scored_frames;
                }
            }
            Engine::Bmuf(state) => {
                let bs = state.block_size;
                for b in (0..max_batches).step_by(bs) {
                    let block: Vec<Vec<Vec<&Sample<S>>>> = batches
                        .iter()
                        .map(|wb| wb.iter().skip(b).take(bs).cloned().collect())
                        .collect();
                    let rep = pool.bmuf_block(&block, lr, state)?;
                    loss += rep.loss_sum;
                    frames += rep.scored_frames;
                }
            }
        }
        frames_seen += frames as u64;
        info!(
            "phase {idx} ({:?}, sub-epoch {}, lr {}): {} units, train CE {:.4}",
            phase.kind,
            phase.sub_epoch,
            phase.lr,
            units.len(),
            if frames > 0 {
                loss / frames as f64
            } else {
                0.0
            }
        );
        let boundary = plan
            .phases
            .get(idx + 1)
            .is_none_or(|next| next.sub_epoch != phase.sub_epoch);
        if boundary {
            let m = engine.current(&pool)?;
            let r = row(phase.sub_epoch, frames_seen, &m)?;
            debug!(
                "sub-epoch {}: held-out frame error {:.4}",
                r.sub_epoch, r.heldout_frame_error
            );
            metrics.push(r);
        }
    }
    Ok(TrainOutcome {
        model: engine.current(&pool)?,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::ModelSpec;
    use crate::schedule::{build_supervised_plan, SupervisedConfig};

    fn toy(n: usize, seed: u64) -> Vec<Sample<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        (0..n)
            .map(|_| {
                let t = 12;
                let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..2)).collect();
                let feats: Vec<f64> = labels
                    .iter()
                    .flat_map(|&l| [if l == 1 { 1.0 } else { -1.0 }, rng.random_range(-0.1..0.1)])
                    .collect();
                Sample::new(
                    Tensor::from_vec(vec![t, 2], feats).unwrap(),
                    Targets::Hard(labels),
                )
                .unwrap()
            })
            .collect()
    }

    fn spec() -> ModelSpec {
        ModelSpec {
            input_dim: 2,
            layer_sizes: vec![4],
            num_outputs: 2,
            bidirectional: false,
            lookahead_frames: 0,
        }
    }

    fn plan() -> TrainPlan {
        build_supervised_plan(&SupervisedConfig {
            epochs: 4,
            chunked_epochs: 2,
            lr0: 0.5,
            decay: 0.8,
            chunk_len: 4,
        })
        .unwrap()
    }

    fn data() -> TrainingData<f64> {
        let lab = toy(24, 1);
        TrainingData {
            labeled: vec![lab.clone(), lab.clone(), lab],
            unlabeled: Vec::new(),
            heldout: toy(8, 2),
        }
    }

    #[test]
    fn learns_a_separable_toy_task() {
        let model = ModelParams::<f64>::init(spec(), 3).unwrap();
        let cfg = TrainerConfig {
            batch_size: 4,
            ..TrainerConfig::new(2, Protocol::Gtc(GtcConfig::default()), 7)
        };
        let out = run_training(model, &plan(), &data(), &cfg).unwrap();
        assert_eq!(out.metrics.len(), 5);
        let first = out.metrics[0].heldout_frame_error;
        let last = out.metrics.last().unwrap().heldout_frame_error;
        assert!(last < 0.1 && last < first, "{first} -> {last}");
    }

    #[test]
    fn sequential_and_threaded_agree() {
        for proto in [
            Protocol::Gtc(GtcConfig::default()),
            Protocol::Bmuf(BmufConfig::new(2)),
        ] {
            let run = |exec| {
                let cfg = TrainerConfig {
                    batch_size: 3,
                    exec,
                    check_replicas: true,
                    ..TrainerConfig::new(3, proto, 11)
                };
                run_training(
                    ModelParams::<f64>::init(spec(), 5).unwrap(),
                    &plan(),
                    &data(),
                    &cfg,
                )
                .unwrap()
            };
            let a = run(ExecMode::Sequential);
            let b = run(ExecMode::Threaded);
            assert_eq!(a.model.params(), b.model.params());
            assert_eq!(a.metrics, b.metrics);
        }
    }

    #[test]
    fn empty_plan_returns_the_initial_model() {
        let model = ModelParams::<f64>::init(spec(), 3).unwrap();
        let cfg = TrainerConfig::new(2, Protocol::Bmuf(BmufConfig::new(1)), 0);
        let out = run_training(model.clone(), &TrainPlan::default(), &data(), &cfg).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.metrics.len(), 1);
    }

    #[test]
    fn too_few_units_is_a_data_error() {
        let mut d = data();
        d.labeled = vec![toy(1, 1)];
        let cfg = TrainerConfig::new(2, Protocol::Gtc(GtcConfig::default()), 0);
        let err = run_training(
            ModelParams::<f64>::init(spec(), 5).unwrap(),
            &plan(),
            &d,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn metrics_csv_layout() {
        let mut buf = Vec::new();
        let rows = [MetricsRow {
            sub_epoch: 1,
            frames_seen: 100,
            heldout_ce: 0.5,
            heldout_frame_error: 0.25,
            relative_error_reduction_vs_baseline: Some(10.0),
        }];
        write_metrics_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{METRICS_HEADER}\n1,100,0.500000,0.250000,10.0000\n")
        );
    }
}
