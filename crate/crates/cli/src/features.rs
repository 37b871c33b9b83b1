//! Utterance-to-feature frontend with corpus-level normalization statistics.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use semisup::featpipe::{
    apply_mvn, logmel, stack_subsample, CausalMeanNormalizer, FeatureSequence, NormStats,
    StatsAccumulator, Utterance, VARIANCE_FLOOR,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::util;

/// Everything needed to normalize features the same way at training and test time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    /// Mean of the raw stacked features; seeds every speaker's running mean.
    pub prior_mean: Vec<f64>,
    pub prior_weight: f64,
    /// Global statistics of the mean-subtracted features.
    pub mvn: NormStats,
}

impl FeatureStats {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| CliError::file(path, e))?;
        let stats: FeatureStats = serde_json::from_slice(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        stats.mvn.validate()?;
        if stats.prior_mean.len() != stats.mvn.dim() {
            return Err(CliError::data(format!(
                "{}: prior and MVN dimensions differ",
                path.display()
            )));
        }
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| CliError::data(e.to_string()))?;
        util::write_atomic(path, &json)
    }
}

/// Utterances grouped by speaker (sorted by id), each speaker's stream
/// ordered by timestamp then utterance id.
pub fn speaker_streams<'a>(
    utts: impl IntoIterator<Item = &'a Utterance>,
) -> BTreeMap<&'a str, Vec<&'a Utterance>> {
    let mut map: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in utts {
        map.entry(u.speaker_id.as_str()).or_default().push(u);
    }
    for v in map.values_mut() {
        v.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.utterance_id.cmp(&b.utterance_id))
        });
    }
    map
}

fn stacked(u: &Utterance, offset: u8) -> Result<semisup::nncore::Tensor<f32>> {
    let lm = logmel(&u.samples)
        .map_err(|e| CliError::data(format!("utterance {:?}: {e}", u.utterance_id)))?;
    Ok(stack_subsample(&lm, offset as usize)?)
}

/// Fits the causal-mean prior and global MVN statistics on offset-0 features.
pub fn fit_stats<'a>(
    utts: impl IntoIterator<Item = &'a Utterance>,
    prior_weight: f64,
) -> Result<FeatureStats> {
    let streams = speaker_streams(utts);
    if streams.is_empty() {
        return Err(CliError::data(
            "no utterances to fit normalization statistics on",
        ));
    }
    let mut raw = Vec::new();
    let mut acc = StatsAccumulator::default();
    for stream in streams.values() {
        let mut feats = Vec::with_capacity(stream.len());
        for u in stream {
            let x = stacked(u, 0)?;
            acc.add_frames(&x)?;
            feats.push(x);
        }
        raw.push(feats);
    }
    let prior_mean = acc.finish()?.mean;

    let mut acc = StatsAccumulator::default();
    for (stream, feats) in streams.values().zip(raw) {
        let mut cmn = CausalMeanNormalizer::new(prior_mean.clone(), prior_weight)?;
        for (u, x) in stream.iter().zip(feats) {
            let seq = FeatureSequence {
                utterance_id: u.utterance_id.clone(),
                offset: 0,
                frames: x,
                normalized: false,
            };
            acc.add_frames(&cmn.process(u.timestamp, &seq)?.frames)?;
        }
    }
    let mvn = acc.finish()?;
    let floored = mvn
        .variance
        .iter()
        .filter(|&&v| v <= VARIANCE_FLOOR)
        .count();
    if floored > 0 {
        warn!("{floored} feature dimension(s) have (near) zero variance");
    }
    Ok(FeatureStats {
        prior_mean,
        prior_weight,
        mvn,
    })
}

/// Normalized features of one speaker's utterances (already in stream
/// order), utterance-major, one sequence per requested offset.
pub fn extract_stream(
    stream: &[&Utterance],
    offsets: &[u8],
    stats: &FeatureStats,
) -> Result<Vec<FeatureSequence>> {
    let mut norms = offsets
        .iter()
        .map(|_| CausalMeanNormalizer::new(stats.prior_mean.clone(), stats.prior_weight))
        .collect::<semisup::Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(stream.len() * offsets.len());
    for u in stream {
        let lm = logmel(&u.samples)
            .map_err(|e| CliError::data(format!("utterance {:?}: {e}", u.utterance_id)))?;
        for (&off, norm) in offsets.iter().zip(&mut norms) {
            let seq = FeatureSequence {
                utterance_id: u.utterance_id.clone(),
                offset: off,
                frames: stack_subsample(&lm, off as usize)?,
                normalized: false,
            };
            out.push(apply_mvn(&norm.process(u.timestamp, &seq)?, &stats.mvn)?);
        }
    }
    Ok(out)
}

/// Extracts every utterance, speakers in id order.
pub fn extract_all<'a>(
    utts: impl IntoIterator<Item = &'a Utterance>,
    offsets: &[u8],
    stats: &FeatureStats,
) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::new();
    for stream in speaker_streams(utts).values() {
        out.extend(extract_stream(stream, offsets, stats)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(id: &str, spk: &str, ts: u64, hz: f32) -> Utterance {
        Utterance {
            utterance_id: id.into(),
            speaker_id: spk.into(),
            timestamp: ts,
            samples: (0..4000)
                .map(|n| {
                    (2.0 * std::f32::consts::PI * hz * n as f32 / 16000.0).sin()
                        + 0.01 * ((n * 7919) % 13) as f32
                })
                .collect(),
        }
    }

    #[test]
    fn fitted_corpus_is_standardized() {
        let utts = vec![
            tone("a1", "a", 0, 300.0),
            tone("a2", "a", 1, 900.0),
            tone("b1", "b", 0, 2000.0),
        ];
        let stats = fit_stats(&utts, 100.0).unwrap();
        assert_eq!(stats.prior_mean.len(), 192);
        let feats = extract_all(&utts, &[0], &stats).unwrap();
        let check = semisup::featpipe::compute_global_stats(&feats).unwrap();
        for d in 0..192 {
            assert!(check.mean[d].abs() < 1e-4, "mean[{d}] = {}", check.mean[d]);
            if stats.mvn.variance[d] > 1e-3 {
                assert!(
                    (check.variance[d] - 1.0).abs() < 1e-3,
                    "var[{d}] = {}",
                    check.variance[d]
                );
            }
        }
    }

    #[test]
    fn streams_follow_timestamps() {
        let utts = vec![
            tone("x2", "s", 5, 300.0),
            tone("x1", "s", 1, 300.0),
            tone("y", "r", 0, 300.0),
        ];
        let streams = speaker_streams(&utts);
        let order: Vec<(&str, Vec<&str>)> = streams
            .iter()
            .map(|(k, v)| (*k, v.iter().map(|u| u.utterance_id.as_str()).collect()))
            .collect();
        assert_eq!(order, vec![("r", vec!["y"]), ("s", vec!["x1", "x2"])]);
    }

    #[test]
    fn offsets_are_interleaved_per_utterance() {
        let utts = vec![tone("a1", "a", 0, 300.0)];
        let stats = fit_stats(&utts, 100.0).unwrap();
        let feats = extract_all(&utts, &[0, 1, 2], &stats).unwrap();
        let offs: Vec<u8> = feats.iter().map(|f| f.offset).collect();
        assert_eq!(offs, vec![0, 1, 2]);
        // 4000 samples give 23 analysis frames
        assert!(feats.iter().all(|f| f.num_frames() == 7));
    }
}
