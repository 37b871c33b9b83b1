use std::cmp::Ordering;

use crate::nncore::{forward, softmax_in_place, ModelParams, Tensor};
use crate::{Error, Result};

/// The retained `(class, logit)` pairs of one frame, classes ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKTargetRecord {
    pub entries: Vec<(u16, f32)>,
}

impl TopKTargetRecord {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut prev: Option<u16> = None;
        for &(i, v) in &self.entries {
            if i as usize >= num_classes {
                return Err(Error::invalid(format!(
                    "class {i} out of range for {num_classes} classes"
                )));
            }
            if prev.is_some_and(|p| p >= i) {
                return Err(Error::invalid("record classes must be strictly ascending"));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("top-k record"));
            }
            prev = Some(i);
        }
        Ok(())
    }
}

/// The `k` largest logits (clamped to the vector length). Ties go to the
/// lower class index.
pub fn select_topk(logits: &[f32], k: usize) -> TopKTargetRecord {
    let k = k.min(logits.len());
    let mut order: Vec<u16> = (0..logits.len() as u16).collect();
    let by_rank = |a: &u16, b: &u16| {
        logits[*b as usize]
            .partial_cmp(&logits[*a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if k > 0 && k < order.len() {
        order.select_nth_unstable_by(k - 1, by_rank);
    }
    order.truncate(k);
    order.sort_unstable();
    TopKTargetRecord {
        entries: order.into_iter().map(|i| (i, logits[i as usize])).collect(),
    }
}

/// Full logit vector with `fill` at every class the record does not carry.
pub fn reconstruct(record: &TopKTargetRecord, num_classes: usize, fill: f32) -> Result<Vec<f32>> {
    let mut out = vec![fill; num_classes];
    for &(i, v) in &record.entries {
        let slot = out.get_mut(i as usize).ok_or_else(|| {
            Error::invalid(format!("class {i} out of range for {num_classes} classes"))
        })?;
        *slot = v;
    }
    Ok(out)
}

/// Reconstructed posteriors for a run of frames, as a `T x num_classes` tensor.
pub fn soft_targets(
    records: &[TopKTargetRecord],
    num_classes: usize,
    fill: f32,
) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(records.len() * num_classes);
    for r in records {
        let mut row = reconstruct(r, num_classes, fill)?;
        softmax_in_place(&mut row);
        data.extend_from_slice(&row);
    }
    Tensor::from_vec(vec![records.len(), num_classes], data)
}

/// Runs the teacher over one utterance and keeps the top-k logits of every frame.
pub fn generate_targets(
    teacher: &ModelParams<f32>,
    features: &Tensor<f32>,
    k: usize,
) -> Result<Vec<TopKTargetRecord>> {
    if teacher.spec().num_outputs > u16::MAX as usize + 1 {
        return Err(Error::invalid("class count does not fit 16-bit indices"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let logits = forward(teacher, features)?;
    Ok(logits.row_iter().map(|row| select_topk(row, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{softmax, ModelSpec};

    #[test]
    fn ties_keep_both() {
        let r = select_topk(&[1.0, 9.0, 3.0, 9.0], 2);
        assert_eq!(r.entries, vec![(1, 9.0), (3, 9.0)]);
    }

    #[test]
    fn picks_largest() {
        let r = select_topk(&[1.0, 9.0, 3.0, 7.0], 2);
        assert_eq!(r.entries, vec![(1, 9.0), (3, 7.0)]);
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        let r = select_topk(&[5.0, 5.0, 5.0, 5.0], 3);
        assert_eq!(
            r.entries.iter().map(|e| e.0).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn k_is_clamped() {
        let r = select_topk(&[0.5, -0.5], 20);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn lossless_when_k_equals_d() {
        let z = [0.3f32, -2.0, 4.1, 0.0, 1.5];
        let back = reconstruct(&select_topk(&z, 5), 5, -1e4).unwrap();
        let (p, q) = (softmax(&z), softmax(&back));
        assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-7));
    }

    #[test]
    fn fill_underflows_to_zero() {
        let rec = TopKTargetRecord {
            entries: vec![(0, 0.0)],
        };
        let p = softmax(&reconstruct(&rec, 3, -1e4).unwrap());
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn reconstruct_rejects_out_of_range() {
        let rec = TopKTargetRecord {
            entries: vec![(3, 1.0)],
        };
        assert!(reconstruct(&rec, 3, -1e4).is_err());
        assert!(rec.validate(3).is_err());
    }

    #[test]
    fn zero_teacher_gives_first_k() {
        let spec = ModelSpec {
            input_dim: 4,
            layer_sizes: vec![3],
            num_outputs: 30,
            bidirectional: true,
            lookahead_frames: 0,
        };
        let teacher = ModelParams::<f32>::zeros(spec).unwrap();
        let x = Tensor::from_vec(vec![7, 4], vec![0.3; 28]).unwrap();
        let recs = generate_targets(&teacher, &x, 20).unwrap();
        assert_eq!(recs.len(), 7);
        for r in recs {
            assert_eq!(r.entries, (0..20u16).map(|i| (i, 0.0)).collect::<Vec<_>>());
        }
    }
}
