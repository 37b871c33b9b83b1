//! Gradient threshold compression.
//!
//! Each worker adds its gradient to a local residual. Every element whose
//! accumulated value reaches the threshold `τ` is sent as signed quanta of
//! size `τ`; whatever is not sent stays in the residual for later rounds.
//! Summing the messages of all workers gives the update every replica applies.

use serde::{Deserialize, Serialize};

use crate::nncore::Scalar;
use crate::{Error, Result};

/// 2^-10.
pub const DEFAULT_TAU: f64 = 0.000_976_562_5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    /// As many `±τ` quanta per element as fit in the accumulated value; the
    /// residual always stays strictly inside `(-τ, τ)`.
    #[default]
    MultiQuanta,
    /// At most one quantum per element per round; large accumulated values
    /// drain over several rounds and the residual is unbounded.
    SingleQuantum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtcConfig {
    /// Threshold and quantum size. Zero sends every accumulated value exactly.
    pub tau: f64,
    #[serde(default)]
    pub quantization: Quantization,
}

impl Default for GtcConfig {
    fn default() -> Self {
        GtcConfig {
            tau: DEFAULT_TAU,
            quantization: Quantization::MultiQuanta,
        }
    }
}

impl GtcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!(
                "threshold must be finite and non-negative, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Per-worker residual.
#[derive(Clone, Debug, PartialEq)]
pub struct GtcState<S> {
    pub residual: Vec<S>,
}

impl<S: Scalar> GtcState<S> {
    pub fn new(len: usize) -> Self {
        GtcState {
            residual: vec![S::zero(); len],
        }
    }
}

/// What one worker sends in one round.
#[derive(Clone, Debug, PartialEq)]
pub enum GtcMessage<S> {
    /// Sparse `(element, signed quantum count)` pairs; each quantum is worth `tau`.
    Quantized { tau: S, entries: Vec<(u32, i32)> },
    /// Dense exact values, used when `tau == 0`.
    Exact(Vec<S>),
}

impl<S: Scalar> GtcMessage<S> {
    /// Number of non-zero elements carried.
    pub fn nnz(&self) -> usize {
        match self {
            GtcMessage::Quantized { entries, .. } => entries.len(),
            GtcMessage::Exact(v) => v.iter().filter(|x| **x != S::zero()).count(),
        }
    }

    pub fn add_to(&self, dst: &mut [S]) {
        match self {
            GtcMessage::Quantized { tau, entries } => {
                for &(i, q) in entries {
                    dst[i as usize] += S::of(q as f64) * *tau;
                }
            }
            GtcMessage::Exact(v) => {
                for (d, &x) in dst.iter_mut().zip(v) {
                    *d += x;
                }
            }
        }
    }

    /// Dense view of the transmitted values.
    pub fn to_dense(&self, len: usize) -> Vec<S> {
        let mut out = vec![S::zero(); len];
        self.add_to(&mut out);
        out
    }
}

/// Folds `grad` into the residual and extracts the message to send.
pub fn compress<S: Scalar>(
    state: &mut GtcState<S>,
    grad: &[S],
    config: &GtcConfig,
) -> Result<GtcMessage<S>> {
    if grad.len() != state.residual.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries, residual {}",
            grad.len(),
            state.residual.len()
        )));
    }
    if config.tau == 0.0 {
        let sent: Vec<S> = state
            .residual
            .iter()
            .zip(grad)
            .map(|(&r, &g)| r + g)
            .collect();
        state.residual.iter_mut().for_each(|r| *r = S::zero());
        return Ok(GtcMessage::Exact(sent));
    }
    let tau = S::of(config.tau);
    let mut entries = Vec::new();
    for (i, (r, &g)) in state.residual.iter_mut().zip(grad).enumerate() {
        let acc = *r + g;
        if !acc.is_finite() {
            return Err(Error::NonFinite("gradient compression"));
        }
        let mut quanta = match config.quantization {
            Quantization::MultiQuanta => (acc / tau).trunc(),
            Quantization::SingleQuantum if acc >= tau => S::one(),
            Quantization::SingleQuantum if acc <= -tau => -S::one(),
            Quantization::SingleQuantum => S::zero(),
        };
        let mut rest = acc - quanta * tau;
        if config.quantization == Quantization::MultiQuanta {
            // division rounding can leave the remainder one quantum off
            if rest >= tau {
                quanta += S::one();
                rest = acc - quanta * tau;
            } else if rest <= -tau {
                quanta -= S::one();
                rest = acc - quanta * tau;
            }
        }
        *r = rest;
        if quanta != S::zero() {
            let q = quanta.to_i32().ok_or_else(|| {
                Error::invalid("quantum count overflows i32; raise the threshold")
            })?;
            entries.push((i as u32, q));
        }
    }
    Ok(GtcMessage::Quantized { tau, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_to_send_for_zero_gradient() {
        let mut st = GtcState::<f64>::new(4);
        let msg = compress(&mut st, &[0.0; 4], &GtcConfig::default()).unwrap();
        assert_eq!(msg.nnz(), 0);
        assert_eq!(st.residual, vec![0.0; 4]);
    }

    #[test]
    fn hand_accumulation_single_element() {
        let cfg = GtcConfig {
            tau: 1.0,
            quantization: Quantization::MultiQuanta,
        };
        let mut st = GtcState::<f64>::new(1);
        let sent: Vec<f64> = (0..3)
            .map(|_| compress(&mut st, &[0.4], &cfg).unwrap().to_dense(1)[0])
            .collect();
        assert_eq!(sent, vec![0.0, 0.0, 1.0]);
        assert!((st.residual[0] - 0.2).abs() < 1e-15);
        assert!((sent.iter().sum::<f64>() + st.residual[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn zero_threshold_sends_exactly() {
        let mut st = GtcState::<f64>::new(3);
        st.residual = vec![0.5, 0.0, -0.25];
        let msg = compress(
            &mut st,
            &[1.0, -2.0, 0.25],
            &GtcConfig {
                tau: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(msg, GtcMessage::Exact(vec![1.5, -2.0, 0.0]));
        assert_eq!(st.residual, vec![0.0; 3]);
    }

    #[test]
    fn multi_quanta_keep_residual_inside_threshold() {
        let cfg = GtcConfig {
            tau: 0.01,
            quantization: Quantization::MultiQuanta,
        };
        let mut st = GtcState::<f64>::new(3);
        let msg = compress(&mut st, &[0.0372, -0.05, 0.0099], &cfg).unwrap();
        assert_eq!(
            msg,
            GtcMessage::Quantized {
                tau: 0.01,
                entries: vec![(0, 3), (1, -5)]
            }
        );
        assert!(st.residual.iter().all(|r| r.abs() < 0.01));
    }

    #[test]
    fn single_quantum_sends_at_most_one() {
        let cfg = GtcConfig {
            tau: 0.5,
            quantization: Quantization::SingleQuantum,
        };
        let mut st = GtcState::<f64>::new(2);
        let msg = compress(&mut st, &[2.0, -0.6], &cfg).unwrap();
        assert_eq!(msg.to_dense(2), vec![0.5, -0.5]);
        assert_eq!(st.residual, vec![1.5, -0.09999999999999998]);
    }

    #[test]
    fn negative_threshold_is_invalid() {
        assert!(GtcConfig {
            tau: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
