//! Log-mel filterbank front-end.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    /// Floor added before the logarithm.
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            frame_length_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 40,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn frame_length(&self) -> usize {
        (self.frame_length_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn hop_length(&self) -> usize {
        (self.hop_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.frame_length().next_power_of_two()
    }

    /// Number of frames for `n` samples (no padding).
    pub fn frame_count(&self, n: usize) -> usize {
        let frame = self.frame_length();
        if n < frame {
            0
        } else {
            (n - frame) / self.hop_length() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0
            || self.frame_length() == 0
            || self.hop_length() == 0
            || self.n_mels == 0
            || !(self.log_floor > 0.0)
        {
            return Err(Error::InvalidConfig(format!("bad front-end config {self:?}")));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `T x F` log-mel energies, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub frame_length_ms: f64,
    pub hop_ms: f64,
}

impl FeatureMatrix {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn mean_over_time(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.n_mels];
        for t in 0..self.n_frames {
            for (m, v) in mean.iter_mut().zip(self.frame(t)) {
                *m += v;
            }
        }
        let n = self.n_frames as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// Triangular filters with unit peak, centres equally spaced on the mel
/// scale between 0 Hz and Nyquist. Row-major `n_mels x (fft_size/2 + 1)`.
pub fn mel_filterbank(config: &FrontendConfig) -> Vec<Vec<f64>> {
    let n_fft = config.fft_size();
    let n_bins = n_fft / 2 + 1;
    let sr = f64::from(config.sample_rate);
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    (0..config.n_mels)
        .map(|m| {
            let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sr / n_fft as f64;
                    let rising = (f - lo) / (centre - lo);
                    let falling = (hi - f) / (hi - centre);
                    rising.min(falling).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Reusable feature extractor (FFT plan, window and filterbank).
pub struct Frontend {
    config: FrontendConfig,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("config", &self.config).finish()
    }
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let frame = config.frame_length();
        // Periodic Hann.
        let window = (0..frame)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame as f64).cos())
            .collect();
        let filters = mel_filterbank(&config);
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size());
        Ok(Self {
            config,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn compute(&self, w: &Waveform) -> Result<FeatureMatrix> {
        if w.sample_rate != self.config.sample_rate {
            return Err(Error::SampleRateMismatch {
                left: w.sample_rate,
                right: self.config.sample_rate,
            });
        }
        let frame = self.config.frame_length();
        let hop = self.config.hop_length();
        let n_frames = self.config.frame_count(w.len());
        if n_frames == 0 {
            return Err(Error::TooShort {
                needed: frame,
                actual: w.len(),
            });
        }
        let n_fft = self.config.fft_size();
        let n_bins = n_fft / 2 + 1;
        let n_mels = self.config.n_mels;
        let mut data = Vec::with_capacity(n_frames * n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut mag = vec![0.0; n_bins];
        for t in 0..n_frames {
            let seg = &w.samples[t * hop..t * hop + frame];
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < frame {
                    Complex::new(seg[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            for filter in &self.filters {
                let e: f64 = filter.iter().zip(&mag).map(|(a, b)| a * b).sum();
                data.push((e + self.config.log_floor).ln());
            }
        }
        Ok(FeatureMatrix {
            data,
            n_frames,
            n_mels,
            frame_length_ms: self.config.frame_length_ms,
            hop_ms: self.config.hop_ms,
        })
    }
}

/// One-shot log-mel extraction. Hot paths should hold a [`Frontend`].
pub fn log_mel_features(w: &Waveform, config: &FrontendConfig) -> Result<FeatureMatrix> {
    Frontend::new(config.clone())?.compute(w)
}
