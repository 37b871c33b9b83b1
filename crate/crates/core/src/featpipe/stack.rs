use crate::nncore::Tensor;
use crate::{Error, Result};

use super::STACK;

/// Stacked, optionally normalized features of one utterance at one offset.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub offset: u8,
    /// `T x (STACK * mel_bins)`.
    pub frames: Tensor<f32>,
    pub normalized: bool,
}

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Output row `j` concatenates input rows `3j+offset .. 3j+offset+2`;
/// trailing rows that do not fill a stack are dropped.
pub fn stack_subsample(logmel: &Tensor<f32>, offset: usize) -> Result<Tensor<f32>> {
    if offset >= STACK {
        return Err(Error::invalid(format!(
            "offset {offset} must be below {STACK}"
        )));
    }
    let rows = logmel.rows();
    let bins = logmel.cols();
    let out_rows = rows.saturating_sub(offset) / STACK;
    let mut data = Vec::with_capacity(out_rows * STACK * bins);
    for j in 0..out_rows {
        let start = STACK * j + offset;
        data.extend_from_slice(&logmel.data()[start * bins..(start + STACK) * bins]);
    }
    Tensor::from_vec(vec![out_rows, STACK * bins], data)
}

/// Frame labels for a stacked stream: each stacked frame takes the label of
/// its centre input row.
pub fn stack_labels(labels: &[usize], offset: usize) -> Result<Vec<usize>> {
    if offset >= STACK {
        return Err(Error::invalid(format!(
            "offset {offset} must be below {STACK}"
        )));
    }
    let out_rows = labels.len().saturating_sub(offset) / STACK;
    Ok((0..out_rows)
        .map(|j| labels[STACK * j + offset + STACK / 2])
        .collect())
}
