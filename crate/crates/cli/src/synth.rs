//! Synthetic speech-like corpus.
//!
//! Classes are the states of small left-to-right "phone" models (three
//! states each). A phone bigram drives the state sequence; every state emits
//! a few sinusoidal formants whose frequencies glide across the phone.
//! Speakers warp the formant frequencies, tilt and scale the spectrum, and
//! each utterance carries additive white noise at a tagged SNR.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use semisup::featpipe::{fnv1a64, Utterance, HOP_SAMPLES, SAMPLE_RATE, WINDOW_SAMPLES};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::{Manifest, ManifestRow, Split};
use crate::util;

const FORMANTS: usize = 3;
const FORMANT_BANDS: [(f64, f64); FORMANTS] = [(250.0, 900.0), (900.0, 2500.0), (2500.0, 5500.0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub tag: String,
    pub snr_db: f64,
    /// Relative sampling weight.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub phones: usize,
    pub states_per_phone: usize,
    pub labeled_speakers: usize,
    pub unlabeled_speakers: usize,
    pub heldout_speakers: usize,
    pub labeled_utterances: usize,
    pub unlabeled_utterances: usize,
    pub heldout_utterances: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Probability of staying in the current state for another 10 ms.
    pub state_stay: f64,
    /// Relative formant shift between neighbouring states of a phone.
    pub glide: f64,
    /// Speakers scale formant frequencies by `exp(u)`, `u ~ U(-warp, warp)`.
    pub speaker_warp: f64,
    pub conditions: Vec<Condition>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            phones: 10,
            states_per_phone: 3,
            labeled_speakers: 20,
            unlabeled_speakers: 100,
            heldout_speakers: 10,
            labeled_utterances: 6,
            unlabeled_utterances: 10,
            heldout_utterances: 6,
            min_seconds: 1.5,
            max_seconds: 3.0,
            state_stay: 0.7,
            glide: 0.08,
            speaker_warp: 0.12,
            conditions: vec![
                Condition {
                    tag: "clean".into(),
                    snr_db: 30.0,
                    weight: 1.0,
                },
                Condition {
                    tag: "snr15".into(),
                    snr_db: 15.0,
                    weight: 1.0,
                },
                Condition {
                    tag: "snr5".into(),
                    snr_db: 5.0,
                    weight: 1.0,
                },
            ],
        }
    }
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.phones * self.states_per_phone
    }

    pub fn validate(&self) -> Result<()> {
        if self.phones < 2 || self.states_per_phone == 0 {
            return Err(CliError::usage(
                "need at least two phones and one state per phone",
            ));
        }
        if self.num_classes() > u16::MAX as usize {
            return Err(CliError::usage("too many classes"));
        }
        let min_len = WINDOW_SAMPLES as f64 / SAMPLE_RATE as f64;
        if !(self.min_seconds >= 4.0 * min_len && self.min_seconds <= self.max_seconds) {
            return Err(CliError::usage(format!(
                "utterance length range [{}, {}] s is empty or too short",
                self.min_seconds, self.max_seconds
            )));
        }
        if !(0.0..1.0).contains(&self.state_stay)
            || !(self.glide >= 0.0)
            || !(self.speaker_warp >= 0.0)
        {
            return Err(CliError::usage(
                "state_stay must be in [0, 1); glide and warp non-negative",
            ));
        }
        if self.conditions.is_empty()
            || self
                .conditions
                .iter()
                .any(|c| !(c.weight > 0.0) || c.tag.is_empty())
        {
            return Err(CliError::usage(
                "need at least one condition with a tag and positive weight",
            ));
        }
        Ok(())
    }
}

/// Formant template of every class.
#[derive(Clone, Debug)]
struct Inventory {
    /// `classes x FORMANTS` (frequency in Hz, amplitude).
    formants: Vec<[(f64, f64); FORMANTS]>,
    /// Phone bigram, rows sum to one.
    bigram: Vec<Vec<f64>>,
}

impl Inventory {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = stream(spec.seed, "inventory");
        let mut formants = Vec::with_capacity(spec.num_classes());
        for _ in 0..spec.phones {
            let base: Vec<(f64, f64)> = FORMANT_BANDS
                .iter()
                .map(|&(lo, hi)| {
                    let f = (lo as f64).ln() + rng.random::<f64>() * (hi / lo).ln();
                    (f.exp(), rng.random_range(0.3..1.0))
                })
                .collect();
            let mid = (spec.states_per_phone as f64 - 1.0) / 2.0;
            for s in 0..spec.states_per_phone {
                let shift = 1.0 + spec.glide * (s as f64 - mid);
                let mut state = [(0.0, 0.0); FORMANTS];
                for (k, slot) in state.iter_mut().enumerate() {
                    // alternate glide direction per formant so states differ in shape
                    let dir = if k % 2 == 0 { shift } else { 2.0 - shift };
                    *slot = (base[k].0 * dir, base[k].1);
                }
                formants.push(state);
            }
        }
        let bigram = (0..spec.phones)
            .map(|p| {
                let mut row: Vec<f64> = (0..spec.phones)
                    .map(|q| {
                        if q == p {
                            0.0
                        } else {
                            0.05 + rng.random::<f64>().powi(4)
                        }
                    })
                    .collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
                row
            })
            .collect();
        Inventory { formants, bigram }
    }
}

#[derive(Clone, Copy, Debug)]
struct Speaker {
    warp: f64,
    gain: f64,
    tilt: f64,
}

/// One generated utterance with its 10 ms frame labels.
#[derive(Clone, Debug)]
pub struct SynthUtterance {
    pub row: ManifestRow,
    pub samples: Vec<f32>,
    /// Class of every analysis frame (the state at the window centre).
    pub labels: Vec<usize>,
}

impl SynthUtterance {
    pub fn utterance(&self) -> Utterance {
        Utterance {
            utterance_id: self.row.utterance_id.clone(),
            speaker_id: self.row.speaker_id.clone(),
            timestamp: self.row.timestamp,
            samples: self.samples.clone(),
        }
    }
}

fn stream(seed: u64, key: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(key.as_bytes()));
    rng
}

fn pick(rng: &mut ChaCha8Rng, weights: impl IntoIterator<Item = f64>) -> usize {
    let w: Vec<f64> = weights.into_iter().collect();
    let mut x = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, &v) in w.iter().enumerate() {
        if x < v {
            return i;
        }
        x -= v;
    }
    w.len() - 1
}

fn render(
    spec: &SynthSpec,
    inv: &Inventory,
    spk: Speaker,
    rng: &mut ChaCha8Rng,
) -> (Vec<f32>, Vec<usize>, usize) {
    let seconds = rng.random_range(spec.min_seconds..=spec.max_seconds);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let hops = n.div_ceil(HOP_SAMPLES);
    let per = spec.states_per_phone;

    let mut states = Vec::with_capacity(hops);
    let mut phone = rng.random_range(0..spec.phones);
    let mut sub = rng.random_range(0..per);
    for _ in 0..hops {
        states.push(phone * per + sub);
        if rng.random::<f64>() >= spec.state_stay {
            sub += 1;
            if sub == per {
                sub = 0;
                phone = pick(rng, inv.bigram[phone].iter().copied());
            }
        }
    }

    let jitter = Normal::new(0.0, 0.15).expect("valid normal");
    let mut phases = [0.0f64; FORMANTS];
    for p in phases.iter_mut() {
        *p = rng.random::<f64>() * 2.0 * PI;
    }
    let mut signal = vec![0.0f64; n];
    for (h, &c) in states.iter().enumerate() {
        let amp_jitter = jitter.sample(rng);
        let tones = inv.formants[c].map(|(f, a)| {
            let f = f * spk.warp;
            (
                f,
                a * (f / 1000.0).powf(spk.tilt) * (amp_jitter as f64).exp(),
            )
        });
        let end = ((h + 1) * HOP_SAMPLES).min(n);
        for s in &mut signal[h * HOP_SAMPLES..end] {
            let mut v = 0.0;
            for (k, &(f, a)) in tones.iter().enumerate() {
                phases[k] += 2.0 * PI * f / SAMPLE_RATE as f64;
                v += a * phases[k].sin();
            }
            *s = v;
        }
        for p in &mut phases {
            *p %= 2.0 * PI;
        }
    }

    let cond = pick(rng, spec.conditions.iter().map(|c| c.weight));
    let power = signal.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise = Normal::new(
        0.0,
        (power / 10f64.powf(spec.conditions[cond].snr_db / 10.0)).sqrt(),
    )
    .expect("finite noise level");
    let samples = signal
        .iter()
        .map(|&v| ((v + noise.sample(rng)) * spk.gain) as f32)
        .collect();

    let frames = (n - WINDOW_SAMPLES) / HOP_SAMPLES + 1;
    let centre = WINDOW_SAMPLES / 2 / HOP_SAMPLES;
    let labels = (0..frames).map(|t| states[t + centre]).collect();
    (samples, labels, cond)
}

/// Generates the whole corpus in memory. Labeled and held-out rows come
/// first in speaker order; unlabeled rows are shuffled.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthUtterance>> {
    spec.validate()?;
    let inv = Inventory::new(spec);
    let mut out = Vec::new();
    let groups = [
        (
            Split::Labeled,
            "lab",
            spec.labeled_speakers,
            spec.labeled_utterances,
        ),
        (
            Split::Heldout,
            "dev",
            spec.heldout_speakers,
            spec.heldout_utterances,
        ),
        (
            Split::Unlabeled,
            "unl",
            spec.unlabeled_speakers,
            spec.unlabeled_utterances,
        ),
    ];
    for (split, prefix, speakers, utts) in groups {
        let mut rows = Vec::new();
        for s in 0..speakers {
            let speaker_id = format!("{prefix}-spk{s:04}");
            let mut rng = stream(spec.seed, &speaker_id);
            let spk = Speaker {
                warp: rng
                    .random_range(-spec.speaker_warp..=spec.speaker_warp)
                    .exp(),
                gain: rng.random_range(-1.0f64..1.0).exp(),
                tilt: rng.random_range(-0.4..0.4),
            };
            for u in 0..utts {
                let utterance_id = format!("{speaker_id}-u{u:03}");
                let mut rng = stream(spec.seed, &utterance_id);
                let (samples, labels, cond) = render(spec, &inv, spk, &mut rng);
                let labeled = split != Split::Unlabeled;
                rows.push(SynthUtterance {
                    row: ManifestRow {
                        audio: format!("audio/{utterance_id}.wav"),
                        labels: if labeled {
                            format!("labels/{utterance_id}.lab")
                        } else {
                            String::new()
                        },
                        utterance_id,
                        speaker_id: speaker_id.clone(),
                        timestamp: 1000 * u as u64,
                        split,
                        condition: spec.conditions[cond].tag.clone(),
                    },
                    samples,
                    labels,
                });
            }
        }
        if split == Split::Unlabeled {
            rows.shuffle(&mut stream(spec.seed, "unlabeled-order"));
        }
        out.extend(rows);
    }
    Ok(out)
}

/// Writes audio, labels (for labeled and held-out rows), `manifest.tsv` and
/// `synth.json` under `dir`.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    spec: &SynthSpec,
    corpus: &[SynthUtterance],
) -> Result<Manifest> {
    let dir = dir.as_ref();
    util::ensure_dir(dir.join("audio"))?;
    util::ensure_dir(dir.join("labels"))?;
    for u in corpus {
        util::write_wav(dir.join(&u.row.audio), &u.samples)?;
        if u.row.has_labels() {
            util::write_labels(dir.join(&u.row.labels), &u.labels)?;
        }
    }
    let manifest = Manifest::new(corpus.iter().map(|u| u.row.clone()).collect(), dir)?;
    manifest.write(dir.join("manifest.tsv"))?;
    let json = serde_json::to_vec_pretty(spec).map_err(|e| CliError::data(e.to_string()))?;
    util::write_atomic(dir.join("synth.json"), &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            seed: 5,
            labeled_speakers: 2,
            unlabeled_speakers: 3,
            heldout_speakers: 1,
            labeled_utterances: 2,
            unlabeled_utterances: 2,
            heldout_utterances: 2,
            min_seconds: 0.5,
            max_seconds: 0.8,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.len(), 4 + 2 + 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.row, y.row);
            assert_eq!(x.samples, y.samples);
            assert_eq!(x.labels, y.labels);
        }
        let c = generate(&SynthSpec { seed: 6, ..small() }).unwrap();
        assert_ne!(a[0].samples, c[0].samples);
    }

    #[test]
    fn splits_use_disjoint_speakers() {
        let corpus = generate(&small()).unwrap();
        for u in &corpus {
            let prefix = match u.row.split {
                Split::Labeled => "lab-",
                Split::Unlabeled => "unl-",
                Split::Heldout => "dev-",
            };
            assert!(u.row.speaker_id.starts_with(prefix));
        }
    }

    #[test]
    fn one_label_per_analysis_frame() {
        let spec = small();
        for u in generate(&spec).unwrap() {
            let frames = (u.samples.len() - WINDOW_SAMPLES) / HOP_SAMPLES + 1;
            assert_eq!(u.labels.len(), frames);
            assert!(u.labels.iter().all(|&l| l < spec.num_classes()));
        }
    }

    #[test]
    fn states_advance_left_to_right() {
        let spec = small();
        for u in generate(&spec).unwrap() {
            for w in u.labels.windows(2) {
                let (a, b) = (w[0], w[1]);
                let per = spec.states_per_phone;
                let ok = a == b
                    || (a / per == b / per && b % per == a % per + 1)
                    || (a % per == per - 1 && b % per == 0);
                assert!(ok, "{a} -> {b}");
            }
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(SynthSpec {
            phones: 1,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            min_seconds: 0.01,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            conditions: vec![],
            ..small()
        }
        .validate()
        .is_err());
    }
}
