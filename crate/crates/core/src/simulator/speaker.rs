use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;

/// Jittered frequencies are clamped into this band.
pub const MIN_FREQ_HZ: f64 = 50.0;
pub const MAX_FREQ_HZ: f64 = 3800.0;

/// Shortest utterance `synth_utterance` accepts.
pub const MIN_DURATION_S: f64 = 0.5;

/// Peak amplitude of every synthesized utterance.
pub const UTTERANCE_PEAK: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub id: usize,
    pub f0: f64,
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
    /// Per-utterance relative perturbation of f0 (uniform in `±f0_jitter`).
    pub f0_jitter: f64,
    /// Per-utterance relative perturbation of each formant.
    pub formant_jitter: f64,
    /// Per-utterance spectral tilt exponent range (`±tilt_jitter`).
    pub tilt_jitter: f64,
}

impl SyntheticSpeaker {
    /// Draws a speaker with voice parameters spread over adult ranges.
    pub fn random(id: usize, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, "speaker", &[id as u64]);
        Self {
            id,
            f0: rng.gen_range(90.0..240.0),
            formants: [
                rng.gen_range(300.0..900.0),
                rng.gen_range(900.0..2200.0),
                rng.gen_range(2300.0..3400.0),
            ],
            bandwidths: [
                rng.gen_range(60.0..120.0),
                rng.gen_range(80.0..160.0),
                rng.gen_range(100.0..220.0),
            ],
            f0_jitter: 0.06,
            formant_jitter: 0.08,
            tilt_jitter: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(SAMPLE_RATE) / 2.0;
        let bad = !(self.f0 > 0.0)
            || self.f0 >= nyquist
            || self.formants.iter().any(|f| !(*f > 0.0 && *f < nyquist))
            || self.bandwidths.iter().any(|b| !(*b > 0.0));
        if bad {
            return Err(Error::InvalidConfig(format!("invalid speaker {}", self.id)));
        }
        Ok(())
    }
}

/// Magnitude response of a two-pole resonator with unit gain at DC.
fn resonator_gain(freq: f64, centre: f64, bandwidth: f64, sr: f64) -> f64 {
    let r = (-PI * bandwidth / sr).exp();
    let theta = 2.0 * PI * centre / sr;
    let omega = 2.0 * PI * freq / sr;
    let a1 = -2.0 * r * theta.cos();
    let a2 = r * r;
    let dc = 1.0 + a1 + a2;
    // |1 + a1 e^{-jw} + a2 e^{-2jw}|
    let re = 1.0 + a1 * omega.cos() + a2 * (2.0 * omega).cos();
    let im = -a1 * omega.sin() - a2 * (2.0 * omega).sin();
    dc / (re * re + im * im).sqrt()
}

/// Per-utterance voice after jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceVoice {
    pub f0: f64,
    pub formants: [f64; 3],
    pub tilt: f64,
}

pub fn jittered_voice(spk: &SyntheticSpeaker, seed: u64) -> UtteranceVoice {
    let mut rng = seed::rng_for(seed, "voice", &[spk.id as u64]);
    let mut jitter = |base: f64, frac: f64| {
        let j = if frac > 0.0 { rng.gen_range(-frac..=frac) } else { 0.0 };
        (base * (1.0 + j)).clamp(MIN_FREQ_HZ, MAX_FREQ_HZ)
    };
    let f0 = jitter(spk.f0, spk.f0_jitter);
    let formants = [
        jitter(spk.formants[0], spk.formant_jitter),
        jitter(spk.formants[1], spk.formant_jitter),
        jitter(spk.formants[2], spk.formant_jitter),
    ];
    let tilt = if spk.tilt_jitter > 0.0 {
        rng.gen_range(-spk.tilt_jitter..=spk.tilt_jitter)
    } else {
        0.0
    };
    UtteranceVoice { f0, formants, tilt }
}

/// Harmonic amplitudes of a voice: a `1/k` source shaped by the three
/// formant resonators and the utterance tilt. The fundamental is kept the
/// strongest partial.
pub fn harmonic_amplitudes(spk: &SyntheticSpeaker, voice: &UtteranceVoice, sr: f64) -> Vec<f64> {
    let limit = sr / 2.0 - 100.0;
    let count = (limit / voice.f0).floor().max(1.0) as usize;
    let mut amps: Vec<f64> = (1..=count)
        .map(|k| {
            let f = k as f64 * voice.f0;
            let shape: f64 = voice
                .formants
                .iter()
                .zip(&spk.bandwidths)
                .map(|(&c, &b)| resonator_gain(f, c, b, sr))
                .product();
            shape * (k as f64).powf(voice.tilt - 1.0)
        })
        .collect();
    let loudest_overtone = amps.iter().skip(1).cloned().fold(0.0, f64::max);
    amps[0] = amps[0].max(2.0 * loudest_overtone);
    amps
}

/// Slow amplitude envelope: random control points every 250 ms in
/// `[0.35, 1]`, cosine-interpolated.
fn envelope(n: usize, sr: f64, rng: &mut impl Rng) -> Vec<f64> {
    let step = (0.25 * sr) as usize;
    let points: Vec<f64> = (0..n / step + 2).map(|_| rng.gen_range(0.35..1.0)).collect();
    (0..n)
        .map(|i| {
            let seg = i / step;
            let t = (i % step) as f64 / step as f64;
            let w = 0.5 - 0.5 * (PI * t).cos();
            points[seg] * (1.0 - w) + points[seg + 1] * w
        })
        .collect()
}

/// Synthesizes one utterance of `spk`. Deterministic in `(spk, seed)`.
pub fn synth_utterance(spk: &SyntheticSpeaker, duration_s: f64, seed: u64) -> Result<Waveform> {
    spk.validate()?;
    if !(duration_s >= MIN_DURATION_S) {
        return Err(Error::InvalidConfig(format!(
            "utterance duration must be at least {MIN_DURATION_S} s, got {duration_s}"
        )));
    }
    let sr = f64::from(SAMPLE_RATE);
    let n = (duration_s * sr).round() as usize;
    let voice = jittered_voice(spk, seed);
    let amps = harmonic_amplitudes(spk, &voice, sr);
    let mut rng = seed::rng_for(seed, "utterance", &[spk.id as u64]);
    // Each partial is a rotating phasor: z_k <- z_k * e^{j k w0}.
    let mut phasors: Vec<(f64, f64)> = amps
        .iter()
        .map(|a| {
            let phase = rng.gen_range(0.0..2.0 * PI);
            (a * phase.cos(), a * phase.sin())
        })
        .collect();
    let rotations: Vec<(f64, f64)> = (1..=amps.len())
        .map(|k| {
            let w = 2.0 * PI * k as f64 * voice.f0 / sr;
            (w.cos(), w.sin())
        })
        .collect();
    let env = envelope(n, sr, &mut rng);
    let mut samples = Vec::with_capacity(n);
    for e in env {
        let mut acc = 0.0;
        for (z, r) in phasors.iter_mut().zip(&rotations) {
            acc += z.1;
            *z = (z.0 * r.0 - z.1 * r.1, z.0 * r.1 + z.1 * r.0);
        }
        samples.push(acc * e);
    }
    let peak = samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let gain = UTTERANCE_PEAK / peak;
    Ok(Waveform::new(
        samples.into_iter().map(|x| x * gain).collect(),
        SAMPLE_RATE,
    ))
}
