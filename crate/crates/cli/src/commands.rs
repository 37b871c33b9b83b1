//! Subcommand arguments and their implementations.
//!
//! Every command checks its inputs before it creates any output file, and
//! every output is written atomically.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use log::info;
use semisup::distopt::{
    evaluate_sequence, run_training, write_metrics_csv, BmufConfig, ExecMode, GtcConfig, Protocol,
    Quantization, TrainerConfig, TrainingData, DEFAULT_BATCH_SIZE, DEFAULT_TAU,
};
use semisup::featpipe::{
    shard_by_speaker, FeatureFileWriter, Utterance, DEFAULT_PRIOR_WEIGHT, MEL_BINS, STACK,
};
use semisup::nncore::{ModelParams, ModelSpec};
use semisup::schedule::{
    build_plan, build_supervised_plan, PhaseKind, ScheduleConfig, SupervisedConfig, TrainPlan,
    DEFAULT_CHUNK_LEN, DEFAULT_DECAY, DEFAULT_LABELED_BOOST,
};
use semisup::targetstore::{generate_targets, TargetStoreReader, TargetStoreWriter, DEFAULT_K};

use crate::data::{
    feature_files, hard_samples, labeled_by_offset, load_labels, shard_file_name, soft_samples,
    FeatureIndex,
};
use crate::error::{CliError, Result};
use crate::features::{extract_stream, fit_stats, speaker_streams, FeatureStats};
use crate::manifest::{Manifest, ManifestRow, Split};
use crate::report::{merge_metrics, read_metrics, write_eval_table, ConditionResult};
use crate::synth::{generate, write_corpus, SynthSpec};
use crate::util;

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Output directory for audio, labels and manifest.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with generator settings; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub phones: Option<usize>,
    #[arg(long)]
    pub labeled_speakers: Option<usize>,
    #[arg(long)]
    pub unlabeled_speakers: Option<usize>,
    #[arg(long)]
    pub heldout_speakers: Option<usize>,
    #[arg(long)]
    pub labeled_utterances: Option<usize>,
    #[arg(long)]
    pub unlabeled_utterances: Option<usize>,
    #[arg(long)]
    pub heldout_utterances: Option<usize>,
}

pub fn synth(args: &SynthArgs) -> Result<Manifest> {
    let mut spec = match &args.spec {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::file(p, e))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    spec.seed = args.seed;
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.phones, args.phones);
    set(&mut spec.labeled_speakers, args.labeled_speakers);
    set(&mut spec.unlabeled_speakers, args.unlabeled_speakers);
    set(&mut spec.heldout_speakers, args.heldout_speakers);
    set(&mut spec.labeled_utterances, args.labeled_utterances);
    set(&mut spec.unlabeled_utterances, args.unlabeled_utterances);
    set(&mut spec.heldout_utterances, args.heldout_utterances);
    spec.validate()?;
    let corpus = generate(&spec)?;
    info!(
        "generated {} utterances over {} classes",
        corpus.len(),
        spec.num_classes()
    );
    write_corpus(&args.out, &spec, &corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OffsetChoice {
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

impl OffsetChoice {
    pub fn offsets(self) -> Vec<u8> {
        match self {
            OffsetChoice::Zero => vec![0],
            OffsetChoice::One => vec![1],
            OffsetChoice::Two => vec![2],
            OffsetChoice::All => (0..STACK as u8).collect(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct FeaturesArgs {
    /// Utterance manifest.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for the shard feature files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub offset: OffsetChoice,
    /// Normalization statistics (JSON). Read unless --fit-stats is given.
    #[arg(long)]
    pub stats: PathBuf,
    /// Fit the statistics on the labeled split and write them to --stats.
    #[arg(long)]
    pub fit_stats: bool,
    #[arg(long, default_value_t = DEFAULT_PRIOR_WEIGHT)]
    pub prior_weight: f64,
}

fn load_audio(manifest: &Manifest, rows: &[&ManifestRow]) -> Result<Vec<Utterance>> {
    rows.iter()
        .map(|r| {
            Ok(Utterance {
                utterance_id: r.utterance_id.clone(),
                speaker_id: r.speaker_id.clone(),
                timestamp: r.timestamp,
                samples: util::read_wav(manifest.resolve(&r.audio))?,
            })
        })
        .collect()
}

pub fn features_extract(args: &FeaturesArgs) -> Result<()> {
    if args.shards == 0 {
        return Err(CliError::usage("--shards must be at least 1"));
    }
    if !(args.prior_weight >= 0.0) {
        return Err(CliError::usage("--prior-weight must be non-negative"));
    }
    let manifest = Manifest::read(&args.input)?;
    for r in &manifest.rows {
        util::require_file(manifest.resolve(&r.audio))?;
    }
    let stats = if args.fit_stats {
        let labeled: Vec<&ManifestRow> = manifest.split(Split::Labeled).collect();
        if labeled.is_empty() {
            return Err(CliError::data(
                "cannot fit statistics: manifest has no labeled rows",
            ));
        }
        let utts = load_audio(&manifest, &labeled)?;
        let stats = fit_stats(&utts, args.prior_weight)?;
        if stats.prior_mean.len() != MEL_BINS * STACK {
            return Err(CliError::data("unexpected feature dimension"));
        }
        stats
    } else {
        FeatureStats::load(&args.stats)?
    };
    let offsets = args.offset.offsets();
    util::ensure_dir(&args.out)?;
    if args.fit_stats {
        stats.save(&args.stats)?;
    }

    let mut by_shard: BTreeMap<usize, Vec<&ManifestRow>> = BTreeMap::new();
    for r in &manifest.rows {
        by_shard
            .entry(shard_by_speaker(&r.speaker_id, args.shards))
            .or_default()
            .push(r);
    }
    for shard in 0..args.shards {
        let rows = by_shard.remove(&shard).unwrap_or_default();
        let utts = load_audio(&manifest, &rows)?;
        let path = args.out.join(shard_file_name(shard));
        util::with_atomic_file(&path, |w| {
            let mut fw = FeatureFileWriter::new(w, MEL_BINS, STACK)?;
            for stream in speaker_streams(&utts).values() {
                for seq in extract_stream(stream, &offsets, &stats)? {
                    fw.write(&seq)?;
                }
            }
            fw.finish()?;
            Ok(())
        })?;
        info!("shard {shard}: {} utterances", utts.len());
    }
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct PlanArgs {
    #[arg(long)]
    pub sub_epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub interleave: usize,
    #[arg(long)]
    pub lr0: f64,
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_LABELED_BOOST)]
    pub labeled_boost: f64,
    /// Last sub-epoch trained with chunked BPTT; later ones use full sequences.
    #[arg(long)]
    pub chunked_until: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
    pub chunk_len: usize,
    /// Do not close the plan with a labeled pass when the interleave count is not reached.
    #[arg(long)]
    pub no_trailing_labeled: bool,
    /// Frames of unlabeled data per sub-epoch (default: split the pool evenly).
    #[arg(long)]
    pub sub_epoch_frames: Option<u64>,
    /// Drop the labeled passes (semi-supervised training without interleaving).
    #[arg(long, conflicts_with = "labeled_only")]
    pub unlabeled_only: bool,
    /// Supervised recipe: --sub-epochs labeled epochs with rotating offsets.
    #[arg(long)]
    pub labeled_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn plan_from_args(args: &PlanArgs) -> Result<TrainPlan> {
    if args.labeled_only {
        return Ok(build_supervised_plan(&SupervisedConfig {
            epochs: args.sub_epochs,
            chunked_epochs: args.chunked_until,
            lr0: args.lr0,
            decay: args.gamma,
            chunk_len: args.chunk_len,
        })?);
    }
    let cfg = ScheduleConfig {
        decay: args.gamma,
        labeled_lr_multiplier: args.labeled_boost,
        chunk_len: args.chunk_len,
        trailing_labeled: !args.no_trailing_labeled,
        sub_epoch_frames: args.sub_epoch_frames,
        ..ScheduleConfig::new(
            args.sub_epochs,
            args.interleave,
            args.lr0,
            args.chunked_until,
        )
    };
    let mut plan = build_plan(&cfg)?;
    if args.unlabeled_only {
        plan.phases.retain(|p| p.kind == PhaseKind::Unlabeled);
    }
    Ok(plan)
}

pub fn plan_build(args: &PlanArgs) -> Result<TrainPlan> {
    let plan = plan_from_args(args)?;
    util::write_atomic(&args.out, plan.to_toml()?.as_bytes())?;
    Ok(plan)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolChoice {
    Gtc,
    Bmuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Args, Debug, Clone)]
pub struct TrainOpts {
    #[arg(long, value_enum, default_value = "gtc")]
    pub protocol: ProtocolChoice,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// GTC threshold; 0 exchanges exact gradients.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Send at most one quantum per element and round.
    #[arg(long)]
    pub single_quantum: bool,
    #[arg(long, default_value_t = 1)]
    pub block_size: usize,
    /// Block momentum (default 1 - 1/workers).
    #[arg(long)]
    pub block_momentum: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub block_lr: f64,
    #[arg(long, value_enum, default_value = "on")]
    pub nesterov: Switch,
    /// Utterances or chunks per worker minibatch.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run workers one after another on one thread (reference mode).
    #[arg(long)]
    pub sequential: bool,
    /// Per-sub-epoch held-out metrics.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Held-out frame error of a reference model, for the relative reduction column.
    #[arg(long, conflicts_with = "baseline")]
    pub baseline_error: Option<f64>,
    /// Reference checkpoint, evaluated on the held-out split.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

impl TrainOpts {
    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let protocol = match self.protocol {
            ProtocolChoice::Gtc => Protocol::Gtc(GtcConfig {
                tau: self.tau,
                quantization: if self.single_quantum {
                    Quantization::SingleQuantum
                } else {
                    Quantization::MultiQuanta
                },
            }),
            ProtocolChoice::Bmuf => Protocol::Bmuf(BmufConfig {
                block_size: self.block_size,
                block_momentum: self.block_momentum,
                block_lr: self.block_lr,
                nesterov: self.nesterov == Switch::On,
            }),
        };
        let cfg = TrainerConfig {
            batch_size: self.batch_size,
            exec: if self.sequential {
                ExecMode::Sequential
            } else {
                ExecMode::Threaded
            },
            baseline_error: self.baseline_error,
            ..TrainerConfig::new(self.workers, protocol, self.seed)
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn parse_layers(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::usage(format!("bad layer size {t:?}")))
        })
        .collect()
}

fn checkpoint_out(path: &PathBuf) -> Result<()> {
    if path.is_dir() {
        return Err(CliError::usage(format!(
            "{} is a directory",
            path.display()
        )));
    }
    Ok(())
}

fn labeled_rows(manifest: &Manifest, split: Split) -> Vec<&ManifestRow> {
    manifest.split(split).collect()
}

fn write_metrics(path: &Option<PathBuf>, rows: &[semisup::distopt::MetricsRow]) -> Result<()> {
    if let Some(p) = path {
        util::with_atomic_file(p, |w| Ok(write_metrics_csv(w, rows)?))?;
    }
    Ok(())
}

fn heldout_error(
    model: &ModelParams<f32>,
    heldout: &[semisup::distopt::Sample<f32>],
) -> Result<f64> {
    Ok(semisup::distopt::evaluate(model, heldout)?.frame_error)
}

#[derive(Args, Debug, Clone)]
pub struct TeacherArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Feature file or directory of shard files (all three offsets).
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: usize,
    /// Comma-separated LSTM layer widths.
    #[arg(long, default_value = "64,64")]
    pub hidden: String,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    /// Epochs trained with chunked BPTT before full-sequence fine-tuning.
    #[arg(long, default_value_t = 4)]
    pub chunked_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr0: f64,
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
    pub chunk_len: usize,
    #[command(flatten)]
    pub train: TrainOpts,
}

pub fn teacher_train(args: &TeacherArgs) -> Result<ModelParams<f32>> {
    checkpoint_out(&args.out)?;
    let spec = ModelSpec {
        input_dim: MEL_BINS * STACK,
        layer_sizes: parse_layers(&args.hidden)?,
        num_outputs: args.classes,
        bidirectional: true,
        lookahead_frames: 0,
    };
    spec.validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let plan = build_supervised_plan(&SupervisedConfig {
        epochs: args.epochs,
        chunked_epochs: args.chunked_epochs,
        lr0: args.lr0,
        decay: args.gamma,
        chunk_len: args.chunk_len,
    })
    .map_err(|e| CliError::usage(e.to_string()))?;
    let mut cfg = args.train.trainer_config()?;
    let manifest = Manifest::read(&args.manifest)?;
    let labeled = labeled_rows(&manifest, Split::Labeled);
    if labeled.is_empty() {
        return Err(CliError::data("manifest has no labeled rows"));
    }
    let feats = FeatureIndex::load(&args.features)?;
    let labels = load_labels(&manifest, Split::Labeled)?;
    let heldout_rows = labeled_rows(&manifest, Split::Heldout);
    let heldout_labels = load_labels(&manifest, Split::Heldout)?;
    let data = TrainingData {
        labeled: labeled_by_offset(&labeled, &feats, &labels, args.classes)?,
        unlabeled: Vec::new(),
        heldout: hard_samples(&heldout_rows, &feats, &heldout_labels, 0, args.classes)?,
    };
    let model = ModelParams::init(spec, args.train.seed)?;
    if let Some(b) = &args.train.baseline {
        cfg.baseline_error = Some(heldout_error(&ModelParams::load(b)?, &data.heldout)?);
    }
    let out = run_training(model, &plan, &data, &cfg)?;
    util::save_model(&args.out, &out.model)?;
    write_metrics(&args.train.metrics_out, &out.metrics)?;
    Ok(out.model)
}

#[derive(Args, Debug, Clone)]
pub struct StudentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Teacher target store covering the unlabeled split.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value = "64")]
    pub hidden: String,
    /// Output delay in 30 ms frames.
    #[arg(long, default_value_t = 3)]
    pub lookahead: usize,
    /// Start from this checkpoint instead of a random initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
}

pub fn student_train(args: &StudentArgs) -> Result<ModelParams<f32>> {
    checkpoint_out(&args.out)?;
    let plan = TrainPlan::load(&args.plan)
        .map_err(|e| CliError::data(format!("{}: {e}", args.plan.display())))?;
    plan.validate()?;
    let mut cfg = args.train.trainer_config()?;
    let needs_targets = plan.phases.iter().any(|p| p.kind == PhaseKind::Unlabeled);
    let store = match (&args.targets, needs_targets) {
        (Some(p), _) => Some(
            TargetStoreReader::open(p)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
        ),
        (None, true) => {
            return Err(CliError::usage(
                "plan has unlabeled phases but no --targets store was given",
            ))
        }
        (None, false) => None,
    };
    let classes = match (args.classes, &store) {
        (Some(c), _) => c,
        (None, Some(s)) => s.num_classes(),
        (None, None) => {
            return Err(CliError::usage(
                "--classes is required without a target store",
            ))
        }
    };
    let model = match &args.init {
        Some(p) => {
            let m = ModelParams::load(p)?;
            if m.spec().num_outputs != classes {
                return Err(CliError::data(format!(
                    "{}: checkpoint has {} outputs, expected {classes}",
                    p.display(),
                    m.spec().num_outputs
                )));
            }
            m
        }
        None => {
            let spec = ModelSpec {
                input_dim: MEL_BINS * STACK,
                layer_sizes: parse_layers(&args.hidden)?,
                num_outputs: classes,
                bidirectional: false,
                lookahead_frames: args.lookahead,
            };
            spec.validate()
                .map_err(|e| CliError::usage(e.to_string()))?;
            ModelParams::init(spec, args.train.seed)?
        }
    };

    let manifest = Manifest::read(&args.manifest)?;
    let feats = FeatureIndex::load(&args.features)?;
    let labeled = labeled_rows(&manifest, Split::Labeled);
    let has_labeled = plan.phases.iter().any(|p| p.kind == PhaseKind::Labeled);
    let labeled_data = if has_labeled {
        let labels = load_labels(&manifest, Split::Labeled)?;
        labeled_by_offset(&labeled, &feats, &labels, classes)?
    } else {
        Vec::new()
    };
    let unlabeled = match &store {
        Some(s) if needs_targets => soft_samples(
            &labeled_rows(&manifest, Split::Unlabeled),
            &feats,
            s,
            classes,
        )?,
        _ => Vec::new(),
    };
    let heldout_rows = labeled_rows(&manifest, Split::Heldout);
    let heldout_labels = load_labels(&manifest, Split::Heldout)?;
    let data = TrainingData {
        labeled: labeled_data,
        unlabeled,
        heldout: hard_samples(&heldout_rows, &feats, &heldout_labels, 0, classes)?,
    };
    if let Some(b) = &args.train.baseline {
        cfg.baseline_error = Some(heldout_error(&ModelParams::load(b)?, &data.heldout)?);
    }
    let out = run_training(model, &plan, &data, &cfg)?;
    util::save_model(&args.out, &out.model)?;
    write_metrics(&args.train.metrics_out, &out.metrics)?;
    Ok(out.model)
}

#[derive(Args, Debug, Clone)]
pub struct TargetsGenerateArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    /// Feature file or directory; offset-0 sequences are used.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to the rows of one split of this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "unlabeled", requires = "manifest")]
    pub split: String,
}

pub fn targets_generate(args: &TargetsGenerateArgs) -> Result<usize> {
    if args.k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    let teacher = ModelParams::load(&args.teacher)?;
    let files = feature_files(&args.features)?;
    let keep: Option<std::collections::HashSet<String>> = match &args.manifest {
        Some(m) => {
            let split: Split = args.split.parse()?;
            Some(
                Manifest::read(m)?
                    .split(split)
                    .map(|r| r.utterance_id.clone())
                    .collect(),
            )
        }
        None => None,
    };
    let mut seqs = Vec::new();
    for f in &files {
        let file = File::open(f).map_err(|e| CliError::file(f, e))?;
        let ff = semisup::featpipe::read_feature_file(std::io::BufReader::new(file))
            .map_err(|e| CliError::data(format!("{}: {e}", f.display())))?;
        if ff.mel_bins * ff.stack != teacher.spec().input_dim {
            return Err(CliError::data(format!(
                "{}: features have dim {}, teacher expects {}",
                f.display(),
                ff.mel_bins * ff.stack,
                teacher.spec().input_dim
            )));
        }
        seqs.extend(ff.sequences.into_iter().filter(|s| {
            s.offset == 0 && keep.as_ref().is_none_or(|k| k.contains(&s.utterance_id))
        }));
    }
    let count = seqs.len();
    util::with_atomic_file(&args.out, |w| {
        let mut store = TargetStoreWriter::new(w, teacher.spec().num_outputs, args.k)?;
        for s in &seqs {
            store.append(
                &s.utterance_id,
                &generate_targets(&teacher, &s.frames, args.k)?,
            )?;
        }
        store.finish()?;
        Ok(())
    })?;
    info!("wrote targets for {count} utterances");
    Ok(count)
}

#[derive(Args, Debug, Clone)]
pub struct TargetsInspectArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Print the records of this utterance.
    #[arg(long)]
    pub utt: Option<String>,
    /// Maximum number of frames to print.
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
}

pub fn targets_inspect<W: Write>(args: &TargetsInspectArgs, mut out: W) -> Result<()> {
    let store = TargetStoreReader::open(&args.store)
        .map_err(|e| CliError::data(format!("{}: {e}", args.store.display())))?;
    let io = CliError::from_io;
    writeln!(out, "classes\t{}", store.num_classes()).map_err(io)?;
    writeln!(out, "k\t{}", store.k()).map_err(io)?;
    writeln!(out, "utterances\t{}", store.len()).map_err(io)?;
    if let Some(id) = &args.utt {
        let recs = store.read(id).map_err(|e| match e {
            semisup::Error::NotFound(id) => {
                CliError::data(format!("utterance {id:?} not in store"))
            }
            e => e.into(),
        })?;
        writeln!(out, "frames\t{}", recs.len()).map_err(io)?;
        for (t, r) in recs.iter().take(args.frames).enumerate() {
            let best = r
                .entries
                .iter()
                .copied()
                .reduce(|a, b| if b.1 > a.1 { b } else { a });
            let entries: Vec<String> = r
                .entries
                .iter()
                .map(|(c, v)| format!("{c}:{v:.3}"))
                .collect();
            writeln!(
                out,
                "{t}\targmax={}\t{}",
                best.map_or(String::from("-"), |b| b.0.to_string()),
                entries.join(" ")
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "heldout")]
    pub split: String,
    /// Reference model for the relative error reduction columns.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Frame error and CE of `model` on `rows`, overall (first entry) and per condition tag.
pub fn evaluate_by_condition(
    model: &ModelParams<f32>,
    rows: &[&ManifestRow],
    feats: &FeatureIndex,
    labels: &HashMap<String, Vec<usize>>,
) -> Result<Vec<ConditionResult>> {
    let classes = model.spec().num_outputs;
    let samples = hard_samples(rows, feats, labels, 0, classes)?;
    let mut by: BTreeMap<String, ConditionResult> = BTreeMap::new();
    let mut all = ConditionResult::new("all");
    for (r, s) in rows.iter().zip(&samples) {
        let semisup::nncore::Targets::Hard(y) = &s.targets else {
            unreachable!()
        };
        let (ce, errors, frames) = evaluate_sequence(model, &s.features, y)?;
        for acc in [
            by.entry(r.condition.clone())
                .or_insert_with(|| ConditionResult::new(&r.condition)),
            &mut all,
        ] {
            acc.ce_sum += ce;
            acc.errors += errors;
            acc.frames += frames;
        }
    }
    let mut out = vec![all];
    out.extend(by.into_values());
    Ok(out)
}

pub fn eval<W: Write>(args: &EvalArgs, out: W) -> Result<Vec<ConditionResult>> {
    let split: Split = args.split.parse()?;
    if split == Split::Unlabeled {
        return Err(CliError::usage(
            "the unlabeled split has no labels to evaluate against",
        ));
    }
    let model = ModelParams::load(&args.checkpoint)?;
    let baseline = args.baseline.as_ref().map(ModelParams::load).transpose()?;
    let manifest = Manifest::read(&args.manifest)?;
    let rows = labeled_rows(&manifest, split);
    if rows.is_empty() {
        return Err(CliError::data(format!("manifest has no {split} rows")));
    }
    let feats = FeatureIndex::load(&args.features)?;
    let labels = load_labels(&manifest, split)?;
    let mut results = evaluate_by_condition(&model, &rows, &feats, &labels)?;
    if let Some(b) = &baseline {
        let base = evaluate_by_condition(b, &rows, &feats, &labels)?;
        for (r, b) in results.iter_mut().zip(base) {
            r.baseline_error = Some(b.frame_error());
        }
    }
    if let Some(p) = &args.out {
        util::with_atomic_file(p, |w| write_eval_table(w, &results))?;
    }
    write_eval_table(BufWriter::new(out), &results)?;
    Ok(results)
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Metrics CSV files written by training runs.
    #[arg(long = "metrics", required = true)]
    pub metrics: Vec<PathBuf>,
    /// Baseline held-out frame error; overrides the reduction column of the inputs.
    #[arg(long)]
    pub baseline_error: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn report<W: Write>(args: &ReportArgs, mut out: W) -> Result<()> {
    if args.baseline_error.is_some_and(|b| !(b > 0.0)) {
        return Err(CliError::usage("--baseline-error must be positive"));
    }
    let runs = args
        .metrics
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            Ok((name, read_metrics(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = merge_metrics(&runs, args.baseline_error);
    if let Some(p) = &args.out {
        util::write_atomic(p, table.as_bytes())?;
    }
    out.write_all(table.as_bytes()).map_err(CliError::from_io)
}
