//! Waveforms, WAV I/O, mixing and the scale-invariant SDR metrics.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Default sample rate of every signal in the toolkit.
pub const SAMPLE_RATE: u32 = 8000;

/// Energy floor in the SI-SDR denominator.
pub const SI_SDR_EPS: f64 = 1e-8;

/// SI-SDR values are clamped to `[-CAP_DB, CAP_DB]`.
pub const CAP_DB: f64 = 60.0;

const PCM16_SCALE: f64 = 32768.0;

/// Mono audio at a fixed sample rate. Samples are kept as `f64` for all
/// metric math; 16-bit quantization only happens at file boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn energy(&self) -> f64 {
        dot(&self.samples, &self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform::new(
            self.samples.iter().map(|x| x * gain).collect(),
            self.sample_rate,
        )
    }

    /// Sample-wise `self - other`. Both operands must have equal rate and length.
    pub fn subtract(&self, other: &Waveform) -> Result<Waveform> {
        check_rates(self, other)?;
        check_lengths(self, other)?;
        Ok(Waveform::new(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
            self.sample_rate,
        ))
    }

    /// Rounds every sample onto the 16-bit PCM grid, so that a later
    /// `save_wav(.., Pcm16)` / `load_wav` round trip is lossless.
    pub fn quantized_pcm16(&self) -> Waveform {
        Waveform::new(
            self.samples
                .iter()
                .map(|&x| f64::from(to_pcm16(x)) / PCM16_SCALE)
                .collect(),
            self.sample_rate,
        )
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_rates(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: a.sample_rate,
            right: b.sample_rate,
        });
    }
    Ok(())
}

fn check_lengths(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn to_pcm16(x: f64) -> i16 {
    (x * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "unsupported format".into(),
        },
        other => wav_err(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelCount {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
            .collect::<Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{format:?} {bits}-bit"),
            })
        }
    };
    Ok(Waveform::new(samples, spec.sample_rate))
}

pub fn save_wav(w: &Waveform, path: impl AsRef<Path>, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if let Some(index) = w.samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSample { index });
    }
    let (bits_per_sample, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample,
        sample_format,
    };
    let wav_err = |source| match source {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in &w.samples {
        match format {
            WavFormat::Pcm16 => writer.write_sample(to_pcm16(x)),
            WavFormat::Float32 => writer.write_sample(x as f32),
        }
        .map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Sums two waveforms in "minimum" mode: the output is as long as the
/// shorter operand.
pub fn mix(a: &Waveform, b: &Waveform) -> Result<Waveform> {
    check_rates(a, b)?;
    let samples = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| x + y)
        .collect();
    Ok(Waveform::new(samples, a.sample_rate))
}

/// Cuts a contiguous `duration_s` segment at a uniformly drawn offset.
pub fn truncate_random(w: &Waveform, duration_s: f64, seed: u64) -> Result<Waveform> {
    let needed = (duration_s * f64::from(w.sample_rate)).round() as usize;
    if needed == 0 || w.len() < needed {
        return Err(Error::TooShort {
            needed: needed.max(1),
            actual: w.len(),
        });
    }
    let mut rng = seed::rng_for(seed, "truncate", &[]);
    let start = rng.gen_range(0..=w.len() - needed);
    Ok(Waveform::new(
        w.samples[start..start + needed].to_vec(),
        w.sample_rate,
    ))
}

/// Scale-invariant signal-to-distortion ratio in dB, clamped to
/// `[-CAP_DB, CAP_DB]`.
pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    check_lengths(est, reference)?;
    si_sdr_slices(&est.samples, &reference.samples)
}

pub(crate) fn si_sdr_slices(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: reference.len(),
        });
    }
    let ref_energy = dot(reference, reference);
    if ref_energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let alpha = dot(est, reference) / ref_energy;
    let mut target_energy = 0.0;
    let mut noise_energy = 0.0;
    for (&e, &r) in est.iter().zip(reference) {
        let t = alpha * r;
        target_energy += t * t;
        noise_energy += (e - t) * (e - t);
    }
    let ratio = target_energy / (noise_energy + SI_SDR_EPS);
    Ok((10.0 * ratio.log10()).clamp(-CAP_DB, CAP_DB))
}

/// SI-SDR of the estimate minus SI-SDR of the unprocessed mixture.
pub fn si_sdr_improvement(est: &Waveform, mixture: &Waveform, reference: &Waveform) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(mixture, reference)?)
}
