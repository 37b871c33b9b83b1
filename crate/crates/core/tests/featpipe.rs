use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use semisup::featpipe::{
    apply_mvn, compute_global_stats, logmel, read_feature_file, shard_by_speaker, stack_labels,
    stack_subsample, CausalMeanNormalizer, FeatureFileWriter, FeatureSequence, StatsAccumulator,
    MEL_BINS,
};
use semisup::nncore::Tensor;

fn seq(id: &str, rows: usize, data: Vec<f32>) -> FeatureSequence {
    let dim = data.len() / rows;
    FeatureSequence {
        utterance_id: id.to_string(),
        offset: 0,
        frames: Tensor::from_vec(vec![rows, dim], data).unwrap(),
        normalized: false,
    }
}

/// Triangle response of every mel filter at `hz`, from the textbook
/// definition: 66 points equally spaced on 2595*log10(1 + f/700) between
/// 0 Hz and 8 kHz, filter m rising over [p(m), p(m+1)] and falling over
/// [p(m+1), p(m+2)].
fn filter_response(hz: f64) -> Vec<f64> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(8000.0);
    let p: Vec<f64> = (0..MEL_BINS + 2)
        .map(|i| inv(top * i as f64 / (MEL_BINS + 1) as f64))
        .collect();
    (0..MEL_BINS)
        .map(|m| {
            let up = (hz - p[m]) / (p[m + 1] - p[m]);
            let down = (p[m + 2] - hz) / (p[m + 2] - p[m + 1]);
            up.min(down).max(0.0)
        })
        .collect()
}

fn argmax(v: &[f32]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[test]
fn pure_tone_peaks_in_the_expected_filter() {
    for hz in [1000.0f64, 440.0, 3000.0] {
        let samples: Vec<f32> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * hz * n as f64 / 16_000.0).sin() as f32)
            .collect();
        let feats = logmel(&samples).unwrap();
        assert_eq!(feats.rows(), 98);
        let resp = filter_response(hz);
        let expected = (0..resp.len()).fold(0, |b, i| if resp[i] > resp[b] { i } else { b });
        for t in 0..feats.rows() {
            assert_eq!(argmax(feats.row(t)), expected, "{hz} Hz, frame {t}");
        }
    }
}

#[test]
fn global_stats_of_standard_normal_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (rows, dim) = (20_000, 8);
    let data: Vec<f32> = (0..rows * dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x as f32
        })
        .collect();
    // split across shards to go through the merge path
    let a = seq("a", rows / 2, data[..rows / 2 * dim].to_vec());
    let b = seq("b", rows / 2, data[rows / 2 * dim..].to_vec());
    let stats = compute_global_stats([&a, &b]).unwrap();
    assert_eq!(stats.frame_count, rows as u64);
    let n = rows as f64;
    for d in 0..dim {
        assert!(
            stats.mean[d].abs() < 3.0 / n.sqrt(),
            "mean[{d}] = {}",
            stats.mean[d]
        );
        assert!(
            (stats.variance[d] - 1.0).abs() < 3.0 * (2.0 / n).sqrt(),
            "var[{d}] = {}",
            stats.variance[d]
        );
    }

    let mut left = StatsAccumulator::new(dim);
    left.add_frames(&a.frames).unwrap();
    let mut right = StatsAccumulator::new(dim);
    right.add_frames(&b.frames).unwrap();
    left.merge(&right).unwrap();
    let merged = left.finish().unwrap();
    for d in 0..dim {
        assert!((merged.mean[d] - stats.mean[d]).abs() < 1e-12);
        assert!((merged.variance[d] - stats.variance[d]).abs() < 1e-12);
    }
}

#[test]
fn normalizing_twice_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f32> = (0..500 * 6)
        .map(|i| {
            let x: f64 = StandardNormal.sample(&mut rng);
            (x * (1 + i % 6) as f64 + 4.0) as f32
        })
        .collect();
    let raw = seq("u", 500, data);
    let stats = compute_global_stats([&raw]).unwrap();
    let once = apply_mvn(&raw, &stats).unwrap();
    let restats = compute_global_stats([&once]).unwrap();
    for d in 0..6 {
        assert!(restats.mean[d].abs() < 1e-5, "{}", restats.mean[d]);
        assert!(
            (restats.variance[d] - 1.0).abs() < 1e-4,
            "{}",
            restats.variance[d]
        );
    }
    let twice = apply_mvn(&once, &restats).unwrap();
    for (a, b) in once.frames.data().iter().zip(twice.frames.data()) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn constant_dimension_is_floored_not_divided_by_zero() {
    let raw = seq("u", 4, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
    let stats = compute_global_stats([&raw]).unwrap();
    let out = apply_mvn(&raw, &stats).unwrap();
    assert!(out.frames.is_finite());
    assert!(out
        .frames
        .data()
        .iter()
        .skip(1)
        .step_by(2)
        .all(|&v| v == 0.0));
}

#[test]
fn speaker_shards_are_balanced() {
    let shards = 64;
    let mut counts = vec![0usize; shards];
    for i in 0..10_000 {
        counts[shard_by_speaker(&format!("speaker-{i:05}"), shards)] += 1;
    }
    let mean = 10_000.0 / shards as f64;
    let max = *counts.iter().max().unwrap() as f64;
    assert!(max < 2.0 * mean, "largest shard {max}, mean {mean}");
    assert_eq!(
        shard_by_speaker("speaker-00042", shards),
        shard_by_speaker("speaker-00042", shards)
    );
}

#[test]
fn stacked_labels_follow_the_centre_row() {
    let rows = 11;
    let ramp = Tensor::from_vec(vec![rows, 1], (0..rows).map(|v| v as f32).collect()).unwrap();
    let labels: Vec<usize> = (0..rows).collect();
    for offset in 0..3 {
        let st = stack_subsample(&ramp, offset).unwrap();
        let lab = stack_labels(&labels, offset).unwrap();
        assert_eq!(st.rows(), (rows - offset) / 3);
        assert_eq!(lab.len(), st.rows());
        for j in 0..st.rows() {
            assert_eq!(st.row(j)[1] as usize, lab[j]);
        }
    }
}

#[test]
fn infinite_prior_subtracts_the_prior_mean() {
    let mut norm = CausalMeanNormalizer::new(vec![1.0, -2.0], f64::INFINITY).unwrap();
    let out = norm
        .process(0, &seq("u", 2, vec![1.0, 0.0, 3.0, -2.0]))
        .unwrap();
    assert_eq!(out.frames.data(), &[0.0, 2.0, 2.0, 0.0]);
}

#[test]
fn timestamps_must_not_go_backwards() {
    let mut norm = CausalMeanNormalizer::new(vec![0.0], 1.0).unwrap();
    let s = seq("u", 1, vec![1.0]);
    norm.process(10, &s).unwrap();
    norm.process(10, &s).unwrap();
    assert!(norm.process(9, &s).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn causal_normalizer_ignores_the_future(
        lens in prop::collection::vec(1usize..6, 1..4),
        cut in 0usize..100,
        weight in prop_oneof![Just(0.0f64), 0.5f64..200.0, Just(f64::INFINITY)],
        values in prop::collection::vec(-5.0f32..5.0, 60),
    ) {
        let prior = vec![0.5, -1.0];
        let mut v = values.iter().copied().cycle();
        let utts: Vec<FeatureSequence> = lens
            .iter()
            .enumerate()
            .map(|(i, &t)| seq(&format!("u{i}"), t, (0..2 * t).map(|_| v.next().unwrap()).collect()))
            .collect();
        let mut full = CausalMeanNormalizer::new(prior.clone(), weight).unwrap();
        let full_out: Vec<f32> = utts
            .iter()
            .enumerate()
            .flat_map(|(i, u)| full.process(i as u64, u).unwrap().frames.into_data())
            .collect();

        // Feed everything up to a cut point, truncating the utterance it lands in.
        let total: usize = lens.iter().sum();
        let cut = cut % total + 1;
        let mut part = CausalMeanNormalizer::new(prior, weight).unwrap();
        let mut part_out = Vec::new();
        let mut left = cut;
        for (i, u) in utts.iter().enumerate() {
            if left == 0 {
                break;
            }
            let take = left.min(u.num_frames());
            let head = seq(&u.utterance_id, take, u.frames.data()[..2 * take].to_vec());
            part_out.extend(part.process(i as u64, &head).unwrap().frames.into_data());
            left -= take;
        }
        prop_assert_eq!(&part_out[..], &full_out[..2 * cut]);
    }

    #[test]
    fn feature_file_round_trip(
        shapes in prop::collection::vec((0usize..5, 0u8..3), 0..5),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 4 * 3;
        let seqs: Vec<FeatureSequence> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(t, off))| FeatureSequence {
                utterance_id: format!("utt-{i}"),
                offset: off,
                frames: Tensor::from_vec(vec![t, dim], (0..t * dim).map(|_| rng.random::<f32>()).collect()).unwrap(),
                normalized: true,
            })
            .collect();
        let mut w = FeatureFileWriter::new(Vec::new(), 4, 3).unwrap();
        for s in &seqs {
            w.write(s).unwrap();
        }
        let bytes = w.finish().unwrap();
        let back = read_feature_file(&bytes[..]).unwrap();
        prop_assert_eq!(back.mel_bins, 4);
        prop_assert_eq!(back.stack, 3);
        prop_assert_eq!(back.sequences, seqs);
    }
}
