use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::nncore::Tensor;
use crate::{Error, Result};

/// Smallest variance used for scaling; constant dimensions are floored to it.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frame_count: u64,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.variance.len() {
            return Err(Error::shape("mean and variance lengths differ"));
        }
        if self.frame_count == 0 {
            return Err(Error::invalid("statistics from zero frames"));
        }
        if self.variance.iter().any(|&v| !(v > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(
                "variances must be positive and means finite",
            ));
        }
        Ok(())
    }
}

/// Per-dimension (sum, sum of squares, count) triple. Merging is associative,
/// so shards can be accumulated independently and combined in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: u64,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        StatsAccumulator {
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn add_frames(&mut self, frames: &Tensor<f32>) -> Result<()> {
        if self.count == 0 && self.sum.is_empty() {
            *self = Self::new(frames.cols());
        }
        if frames.cols() != self.sum.len() {
            return Err(Error::shape(format!(
                "frame dim {} does not match accumulator dim {}",
                frames.cols(),
                self.sum.len()
            )));
        }
        for row in frames.row_iter() {
            for ((s, q), &x) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(row) {
                let x = x as f64;
                *s += x;
                *q += x * x;
            }
        }
        self.count += frames.rows() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        if other.sum.is_empty() {
            return Ok(());
        }
        if self.sum.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if other.sum.len() != self.sum.len() {
            return Err(Error::shape("cannot merge accumulators of different dims"));
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn finish(&self) -> Result<NormStats> {
        if self.count == 0 {
            return Err(Error::invalid(
                "cannot compute statistics of an empty corpus",
            ));
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mut floored = Vec::new();
        let variance = self
            .sum_sq
            .iter()
            .zip(&mean)
            .enumerate()
            .map(|(d, (q, m))| {
                let v = q / n - m * m;
                if v < VARIANCE_FLOOR {
                    floored.push(d);
                    VARIANCE_FLOOR
                } else {
                    v
                }
            })
            .collect();
        if !floored.is_empty() {
            log::warn!("variance floored at {VARIANCE_FLOOR} in dimensions {floored:?}");
        }
        Ok(NormStats {
            mean,
            variance,
            frame_count: self.count,
        })
    }
}

pub fn compute_global_stats<'a>(
    corpus: impl IntoIterator<Item = &'a FeatureSequence>,
) -> Result<NormStats> {
    let mut acc = StatsAccumulator::default();
    for seq in corpus {
        acc.add_frames(&seq.frames)?;
    }
    acc.finish()
}

/// `(x - mean) / sqrt(variance)` per dimension.
pub fn apply_mvn(seq: &FeatureSequence, stats: &NormStats) -> Result<FeatureSequence> {
    if seq.dim() != stats.dim() {
        return Err(Error::shape(format!(
            "features have dim {}, stats {}",
            seq.dim(),
            stats.dim()
        )));
    }
    let inv_std: Vec<f64> = stats.variance.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut frames = seq.frames.clone();
    let cols = frames.cols();
    for (i, x) in frames.data_mut().iter_mut().enumerate() {
        let d = i % cols;
        *x = ((*x as f64 - stats.mean[d]) * inv_std[d]) as f32;
    }
    Ok(FeatureSequence {
        utterance_id: seq.utterance_id.clone(),
        offset: seq.offset,
        frames,
        normalized: true,
    })
}

/// Running per-speaker mean subtraction.
///
/// The running sum is seeded with `prior_mean * prior_weight`; frame `t` is
/// reduced by the mean of the prior and all earlier frames of the speaker
/// (frame `t` itself excluded). State carries over between utterances, which
/// must arrive in timestamp order.
#[derive(Clone, Debug)]
pub struct CausalMeanNormalizer {
    prior_mean: Vec<f64>,
    prior_weight: f64,
    sum: Vec<f64>,
    seen: f64,
    last_timestamp: Option<u64>,
}

impl CausalMeanNormalizer {
    pub fn new(prior_mean: Vec<f64>, prior_weight: f64) -> Result<Self> {
        if !(prior_weight >= 0.0) {
            return Err(Error::invalid(format!(
                "prior weight {prior_weight} must be non-negative"
            )));
        }
        Ok(CausalMeanNormalizer {
            sum: vec![0.0; prior_mean.len()],
            prior_mean,
            prior_weight,
            seen: 0.0,
            last_timestamp: None,
        })
    }

    fn current_mean(&self, d: usize) -> f64 {
        if self.prior_weight.is_infinite() {
            self.prior_mean[d]
        } else if self.prior_weight + self.seen == 0.0 {
            0.0
        } else {
            (self.prior_weight * self.prior_mean[d] + self.sum[d]) / (self.prior_weight + self.seen)
        }
    }

    pub fn process(&mut self, timestamp: u64, seq: &FeatureSequence) -> Result<FeatureSequence> {
        if let Some(prev) = self.last_timestamp {
            if timestamp < prev {
                return Err(Error::Unsorted {
                    previous: prev,
                    current: timestamp,
                });
            }
        }
        if seq.dim() != self.prior_mean.len() {
            return Err(Error::shape(format!(
                "features have dim {}, prior {}",
                seq.dim(),
                self.prior_mean.len()
            )));
        }
        self.last_timestamp = Some(timestamp);
        let mut frames = seq.frames.clone();
        let cols = frames.cols();
        for t in 0..frames.rows() {
            let row = frames.row_mut(t);
            for d in 0..cols {
                let x = row[d] as f64;
                row[d] = (x - self.current_mean(d)) as f32;
                self.sum[d] += x;
            }
            self.seen += 1.0;
        }
        Ok(FeatureSequence {
            utterance_id: seq.utterance_id.clone(),
            offset: seq.offset,
            frames,
            normalized: seq.normalized,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: Vec<Vec<f32>>) -> FeatureSequence {
        FeatureSequence {
            utterance_id: "u".into(),
            offset: 0,
            frames: Tensor::from_rows(&rows).unwrap(),
            normalized: false,
        }
    }

    #[test]
    fn two_frame_closed_form() {
        let (x1, x2, m, w) = (2.5f32, -1.0f32, 0.5f64, 4.0f64);
        let mut n = CausalMeanNormalizer::new(vec![m], w).unwrap();
        let out = n.process(0, &seq(vec![vec![x1], vec![x2]])).unwrap();
        let expect = [x1 as f64 - m, x2 as f64 - (w * m + x1 as f64) / (w + 1.0)];
        for (o, e) in out.frames.data().iter().zip(expect) {
            assert!((*o as f64 - e).abs() < 1e-6);
        }
    }

    #[test]
    fn infinite_prior_subtracts_prior_mean() {
        let mut n = CausalMeanNormalizer::new(vec![1.0, -2.0], f64::INFINITY).unwrap();
        let out = n
            .process(5, &seq(vec![vec![3.0, 3.0], vec![0.0, 1.0]]))
            .unwrap();
        assert_eq!(out.frames.data(), &[2.0, 5.0, -1.0, 3.0]);
    }

    #[test]
    fn constant_input_at_prior_mean_is_zeroed() {
        let mut n = CausalMeanNormalizer::new(vec![0.75; 3], 10.0).unwrap();
        for ts in 0..3 {
            let out = n.process(ts, &seq(vec![vec![0.75; 3]; 4])).unwrap();
            assert!(out.frames.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn state_carries_across_utterances_and_order_is_checked() {
        let mut a = CausalMeanNormalizer::new(vec![0.0], 1.0).unwrap();
        let joint = a
            .process(1, &seq(vec![vec![1.0], vec![2.0], vec![3.0]]))
            .unwrap();
        let mut b = CausalMeanNormalizer::new(vec![0.0], 1.0).unwrap();
        let first = b.process(1, &seq(vec![vec![1.0], vec![2.0]])).unwrap();
        let second = b.process(2, &seq(vec![vec![3.0]])).unwrap();
        assert_eq!(&joint.frames.data()[..2], first.frames.data());
        assert_eq!(joint.frames.data()[2], second.frames.data()[0]);
        assert!(matches!(
            b.process(1, &seq(vec![vec![0.0]])),
            Err(Error::Unsorted {
                previous: 2,
                current: 1
            })
        ));
    }

    #[test]
    fn constant_corpus_floors_variance() {
        let corpus = vec![seq(vec![vec![4.0, -1.0]; 5])];
        let stats = compute_global_stats(&corpus).unwrap();
        assert_eq!(stats.variance, vec![VARIANCE_FLOOR; 2]);
        let out = apply_mvn(&corpus[0], &stats).unwrap();
        assert!(out.frames.data().iter().all(|&v| v == 0.0));
        assert!(out.normalized);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(compute_global_stats(&Vec::<FeatureSequence>::new()).is_err());
    }

    #[test]
    fn merged_accumulators_match_single_pass() {
        let a = seq(vec![vec![1.0, 2.0], vec![3.0, 5.0]]);
        let b = seq(vec![vec![-1.0, 0.5]]);
        let whole = compute_global_stats([&a, &b]).unwrap();
        let mut left = StatsAccumulator::default();
        left.add_frames(&a.frames).unwrap();
        let mut right = StatsAccumulator::default();
        right.add_frames(&b.frames).unwrap();
        left.merge(&right).unwrap();
        assert_eq!(left.finish().unwrap(), whole);
        assert_eq!(whole.frame_count, 3);
    }
}
