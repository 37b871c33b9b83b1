//! Scheduled learning: one pass over the unlabeled pool split into
//! sub-epochs with exponentially decaying learning rate, labeled passes
//! interleaved every few sub-epochs at a boosted rate with rotating feature
//! offsets, and chunked BPTT switched to full-sequence for the final
//! sub-epochs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::featpipe::STACK;
use crate::{Error, Result};

pub const DEFAULT_CHUNK_LEN: usize = 32;
pub const DEFAULT_DECAY: f64 = 0.8;
pub const DEFAULT_LABELED_BOOST: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Unlabeled,
    Labeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bptt {
    Chunked(usize),
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    /// 1-based sub-epoch this phase belongs to; a labeled pass shares the
    /// index of the unlabeled sub-epoch it follows.
    pub sub_epoch: usize,
    pub lr: f64,
    /// Feature offset; labeled phases only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u8>,
    /// Chunk length for chunked BPTT; absent means full-sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_len: Option<usize>,
    /// Frames to consume from the unlabeled pool; absent splits the pool evenly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_frames: Option<u64>,
}

impl Phase {
    pub fn bptt(&self) -> Bptt {
        match self.chunk_len {
            Some(n) => Bptt::Chunked(n),
            None => Bptt::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub num_sub_epochs: usize,
    /// A labeled pass follows every `interleave_every` unlabeled sub-epochs.
    pub interleave_every: usize,
    pub lr0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_boost")]
    pub labeled_lr_multiplier: f64,
    /// Sub-epochs `1..=chunked_until_sub_epoch` use chunked BPTT.
    pub chunked_until_sub_epoch: usize,
    #[serde(default = "default_chunk_len")]
    pub chunk_len: usize,
    /// Close the plan with a labeled pass even if the interleave counter has not elapsed.
    #[serde(default = "default_true")]
    pub trailing_labeled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_epoch_frames: Option<u64>,
}

fn default_decay() -> f64 {
    DEFAULT_DECAY
}

fn default_boost() -> f64 {
    DEFAULT_LABELED_BOOST
}

fn default_chunk_len() -> usize {
    DEFAULT_CHUNK_LEN
}

fn default_true() -> bool {
    true
}

impl ScheduleConfig {
    pub fn new(
        num_sub_epochs: usize,
        interleave_every: usize,
        lr0: f64,
        chunked_until_sub_epoch: usize,
    ) -> Self {
        ScheduleConfig {
            num_sub_epochs,
            interleave_every,
            lr0,
            decay: DEFAULT_DECAY,
            labeled_lr_multiplier: DEFAULT_LABELED_BOOST,
            chunked_until_sub_epoch,
            chunk_len: DEFAULT_CHUNK_LEN,
            trailing_labeled: true,
            sub_epoch_frames: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.num_sub_epochs == 0 {
            return bad("num_sub_epochs must be at least 1");
        }
        if self.interleave_every == 0 || self.interleave_every > self.num_sub_epochs {
            return bad("interleave_every must be in 1..=num_sub_epochs");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive and finite");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must be in (0, 1]");
        }
        if !(self.labeled_lr_multiplier >= 1.0 && self.labeled_lr_multiplier.is_finite()) {
            return bad("labeled_lr_multiplier must be at least 1");
        }
        if self.chunked_until_sub_epoch > self.num_sub_epochs {
            return bad("chunked_until_sub_epoch exceeds num_sub_epochs");
        }
        if self.chunk_len == 0 {
            return bad("chunk_len must be at least 1");
        }
        Ok(())
    }
}

/// Baseline recipe on labeled data only: decaying epochs cycling through the
/// feature offsets, chunked for the first `chunked_epochs`, then full-sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub chunked_epochs: usize,
    pub lr0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_chunk_len")]
    pub chunk_len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    #[serde(default)]
    pub phases: Vec<Phase>,
}

/// Position in a plan; serializable so a run can resume where it stopped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCursor {
    pub position: usize,
}

pub fn build_plan(config: &ScheduleConfig) -> Result<TrainPlan> {
    config.validate()?;
    let mut phases = Vec::new();
    let mut rotation = 0usize;
    for s in 0..config.num_sub_epochs {
        let sub_epoch = s + 1;
        let lr = config.lr0 * config.decay.powi(s as i32);
        let chunk_len = (sub_epoch <= config.chunked_until_sub_epoch).then_some(config.chunk_len);
        phases.push(Phase {
            kind: PhaseKind::Unlabeled,
            sub_epoch,
            lr,
            offset: None,
            chunk_len,
            budget_frames: config.sub_epoch_frames,
        });
        let due = sub_epoch % config.interleave_every == 0;
        let closing = config.trailing_labeled && sub_epoch == config.num_sub_epochs;
        if due || closing {
            phases.push(Phase {
                kind: PhaseKind::Labeled,
                sub_epoch,
                lr: lr * config.labeled_lr_multiplier,
                offset: Some((rotation % STACK) as u8),
                chunk_len,
                budget_frames: None,
            });
            rotation += 1;
        }
    }
    let plan = TrainPlan { phases };
    plan.validate()?;
    Ok(plan)
}

pub fn build_supervised_plan(config: &SupervisedConfig) -> Result<TrainPlan> {
    if !(config.lr0 > 0.0 && config.lr0.is_finite()) || !(config.decay > 0.0 && config.decay <= 1.0)
    {
        return Err(Error::invalid("lr0 must be positive and decay in (0, 1]"));
    }
    if config.chunk_len == 0 || config.chunked_epochs > config.epochs {
        return Err(Error::invalid(
            "chunk_len must be positive and chunked_epochs <= epochs",
        ));
    }
    let phases = (0..config.epochs)
        .map(|e| Phase {
            kind: PhaseKind::Labeled,
            sub_epoch: e + 1,
            lr: config.lr0 * config.decay.powi(e as i32),
            offset: Some((e % STACK) as u8),
            chunk_len: (e < config.chunked_epochs).then_some(config.chunk_len),
            budget_frames: None,
        })
        .collect();
    Ok(TrainPlan { phases })
}

impl TrainPlan {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn num_sub_epochs(&self) -> usize {
        let mut n = 0;
        let mut last = None;
        for p in &self.phases {
            if last != Some(p.sub_epoch) {
                n += 1;
                last = Some(p.sub_epoch);
            }
        }
        n
    }

    pub fn validate(&self) -> Result<()> {
        let mut rotation = 0usize;
        let mut last_unlabeled_lr = f64::INFINITY;
        let mut last_sub_epoch = 0;
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(Error::invalid(format!(
                    "phase {i}: learning rate must be positive"
                )));
            }
            if p.sub_epoch < last_sub_epoch {
                return Err(Error::invalid(format!(
                    "phase {i}: sub-epoch index decreases"
                )));
            }
            last_sub_epoch = p.sub_epoch;
            if p.chunk_len == Some(0) {
                return Err(Error::invalid(format!(
                    "phase {i}: chunk_len must be positive"
                )));
            }
            match p.kind {
                PhaseKind::Unlabeled => {
                    if p.lr > last_unlabeled_lr {
                        return Err(Error::invalid(format!(
                            "phase {i}: unlabeled learning rate increases"
                        )));
                    }
                    last_unlabeled_lr = p.lr;
                }
                PhaseKind::Labeled => {
                    let expected = (rotation % STACK) as u8;
                    if p.offset != Some(expected) {
                        return Err(Error::invalid(format!(
                            "phase {i}: labeled offset {:?}, rotation expects {expected}",
                            p.offset
                        )));
                    }
                    rotation += 1;
                }
            }
        }
        Ok(())
    }

    /// The phase at `cursor` without advancing.
    pub fn peek(&self, cursor: &PlanCursor) -> Option<&Phase> {
        self.phases.get(cursor.position)
    }

    /// The phase at `cursor`, advancing it; `None` once the plan is exhausted.
    pub fn next_phase(&self, cursor: &mut PlanCursor) -> Option<&Phase> {
        let p = self.phases.get(cursor.position)?;
        cursor.position += 1;
        Some(p)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: TrainPlan = toml::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// `100 * (baseline - model) / baseline`.
pub fn relative_error_reduction(baseline: f64, model: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::invalid(format!(
            "baseline error must be positive, got {baseline}"
        )));
    }
    Ok(100.0 * (baseline - model) / baseline)
}
