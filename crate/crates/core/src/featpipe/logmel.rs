use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FFT_SIZE, HOP_SAMPLES, MEL_BINS, SAMPLE_RATE, WINDOW_SAMPLES};
use crate::nncore::Tensor;
use crate::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Floor applied to filter energies before the log.
    pub epsilon: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: SAMPLE_RATE,
            window: WINDOW_SAMPLES,
            hop: HOP_SAMPLES,
            fft_size: FFT_SIZE,
            mel_bins: MEL_BINS,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
            epsilon: 1e-10,
        }
    }
}

/// Log-mel analyser with a precomputed window, filterbank and FFT plan.
pub struct LogMel {
    config: MelConfig,
    window: Vec<f64>,
    /// `mel_bins` rows of (first FFT bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(config: MelConfig) -> Result<Self> {
        if config.window == 0 || config.hop == 0 || config.window > config.fft_size {
            return Err(Error::invalid(
                "window must be in 1..=fft_size and hop positive",
            ));
        }
        if config.mel_bins == 0 || !(config.f_min < config.f_max) || !(config.epsilon > 0.0) {
            return Err(Error::invalid("bad mel filterbank configuration"));
        }
        // symmetric Hann
        let n = config.window;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1).max(1) as f64).cos())
            .collect();
        let filters = Self::triangles(&config);
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(LogMel {
            config,
            window,
            filters,
            fft,
        })
    }

    fn triangles(c: &MelConfig) -> Vec<(usize, Vec<f64>)> {
        let (lo, hi) = (hz_to_mel(c.f_min), hz_to_mel(c.f_max));
        let edges: Vec<f64> = (0..c.mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (c.mel_bins + 1) as f64))
            .collect();
        let bins = c.fft_size / 2 + 1;
        let bin_hz = c.sample_rate as f64 / c.fft_size as f64;
        (0..c.mel_bins)
            .map(|m| {
                let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > left && f < centre {
                            (f - left) / (centre - left)
                        } else if f >= centre && f < right {
                            (right - f) / (right - centre)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(first, _)) => {
                        let last = weights.last().unwrap().0;
                        let mut dense = vec![0.0; last - first + 1];
                        for (k, w) in weights {
                            dense[k - first] = w;
                        }
                        (first, dense)
                    }
                    None => (0, Vec::new()),
                }
            })
            .collect()
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Number of analysis frames for `samples` input samples.
    pub fn num_frames(&self, samples: usize) -> usize {
        if samples < self.config.window {
            0
        } else {
            (samples - self.config.window) / self.config.hop + 1
        }
    }

    /// `T x mel_bins` natural-log filter energies.
    pub fn compute(&self, samples: &[f32]) -> Result<Tensor<f32>> {
        let c = &self.config;
        if samples.len() < c.window {
            return Err(Error::invalid(format!(
                "audio has {} samples, shorter than one {}-sample window",
                samples.len(),
                c.window
            )));
        }
        let frames = self.num_frames(samples.len());
        let mut out = Vec::with_capacity(frames * c.mel_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); c.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; c.fft_size / 2 + 1];
        for t in 0..frames {
            let start = t * c.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let v = if i < c.window {
                    samples[start + i] as f64 * self.window[i]
                } else {
                    0.0
                };
                *slot = Complex::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, z) in power.iter_mut().zip(&buf) {
                *p = z.norm_sqr();
            }
            for (first, weights) in &self.filters {
                let e: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                out.push(e.max(c.epsilon).ln() as f32);
            }
        }
        let t = Tensor::from_vec(vec![frames, c.mel_bins], out)?;
        t.ensure_finite("logmel")?;
        Ok(t)
    }
}

/// Log-mel features with the default configuration.
pub fn logmel(samples: &[f32]) -> Result<Tensor<f32>> {
    LogMel::new(MelConfig::default())?.compute(samples)
}
