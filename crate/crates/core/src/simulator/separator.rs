use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sample::ExtractionSample;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::seed;

/// Controls the simulated extraction model and its confusion rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionConfig {
    /// Probability that the separator locks onto the interferer.
    pub probability: f64,
    /// Fraction of the other speaker leaking into the estimate.
    pub leakage: f64,
    /// Additive white-noise SNR relative to the estimate; `None` is noise-free.
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for ConfusionConfig {
    fn default() -> Self {
        Self {
            probability: 0.1,
            leakage: 0.05,
            noise_snr_db: Some(20.0),
            seed: 0,
        }
    }
}

impl ConfusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidConfig(format!(
                "confusion probability must be in [0, 1], got {}",
                self.probability
            )));
        }
        if !(0.0..1.0).contains(&self.leakage) {
            return Err(Error::InvalidConfig(format!(
                "leakage must be in [0, 1), got {}",
                self.leakage
            )));
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(Error::InvalidConfig("noise SNR must be finite".into()));
            }
        }
        Ok(())
    }

    /// The Bernoulli draw for one sample role. Uses its own stream so
    /// changing `probability` never alters the audio.
    pub fn is_confused(&self, sample: &ExtractionSample) -> bool {
        let mut rng = seed::rng_for(
            self.seed,
            "confusion",
            &[sample.index as u64, sample.role.index()],
        );
        rng.gen::<f64>() < self.probability
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub estimate: Waveform,
    pub confused: bool,
}

/// Simulated extraction model.
///
/// Clean branch: `(1-b) s_t + b s_i + n`. Confused branch:
/// `(1-b) s_i + b s_t + n`. The estimate stays at the scale of the
/// mixture's components, so `y - estimate` is directly the complement.
pub fn toy_separator(sample: &ExtractionSample, cfg: &ConfusionConfig) -> Result<Separation> {
    cfg.validate()?;
    sample.validate()?;
    let confused = cfg.is_confused(sample);
    let (main, leak) = if confused {
        (&sample.source_interferer, &sample.source_target)
    } else {
        (&sample.source_target, &sample.source_interferer)
    };
    let b = cfg.leakage;
    let mut samples: Vec<f64> = main
        .samples
        .iter()
        .zip(&leak.samples)
        .map(|(m, l)| (1.0 - b) * m + b * l)
        .collect();
    if let Some(snr_db) = cfg.noise_snr_db {
        let mut rng = seed::rng_for(
            cfg.seed,
            "separator-noise",
            &[sample.index as u64, sample.role.index()],
        );
        let noise: Vec<f64> = (0..samples.len()).map(|_| rng.sample(StandardNormal)).collect();
        let signal_energy: f64 = samples.iter().map(|x| x * x).sum();
        let noise_energy: f64 = noise.iter().map(|x| x * x).sum();
        let gain = (signal_energy / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt();
        for (s, n) in samples.iter_mut().zip(&noise) {
            *s += gain * n;
        }
    }
    Ok(Separation {
        estimate: Waveform::new(samples, sample.mixture.sample_rate),
        confused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{si_sdr, si_sdr_improvement};
    use crate::simulator::{make_extraction_sample, SyntheticSpeaker};

    fn sample(index: usize) -> ExtractionSample {
        let a = SyntheticSpeaker::random(0, 2);
        let b = SyntheticSpeaker::random(1, 2);
        let mut s = make_extraction_sample(&a, &b, 1.0, index as u64).unwrap();
        s.index = index;
        s
    }

    #[test]
    fn clean_path_is_exact() {
        let s = sample(0);
        let cfg = ConfusionConfig {
            probability: 0.0,
            leakage: 0.0,
            noise_snr_db: None,
            seed: 1,
        };
        let out = toy_separator(&s, &cfg).unwrap();
        assert!(!out.confused);
        assert_eq!(out.estimate, s.source_target);
        assert_eq!(si_sdr(&out.estimate, &s.source_target).unwrap(), crate::audio::CAP_DB);
    }

    #[test]
    fn confused_path_is_strongly_negative() {
        let cfg = ConfusionConfig {
            probability: 1.0,
            leakage: 0.0,
            noise_snr_db: None,
            seed: 1,
        };
        for i in 0..5 {
            let s = sample(i);
            let out = toy_separator(&s, &cfg).unwrap();
            assert!(out.confused);
            let imp = si_sdr_improvement(&out.estimate, &s.mixture, &s.source_target).unwrap();
            assert!(imp < -10.0, "{imp}");
        }
    }

    #[test]
    fn noise_hits_requested_snr() {
        let s = sample(2);
        let cfg = ConfusionConfig {
            probability: 0.0,
            leakage: 0.0,
            noise_snr_db: Some(20.0),
            seed: 4,
        };
        let out = toy_separator(&s, &cfg).unwrap();
        let noise = out.estimate.subtract(&s.source_target).unwrap();
        let snr = 10.0 * (s.source_target.energy() / noise.energy()).log10();
        assert!((snr - 20.0).abs() < 1e-9, "{snr}");
    }

    #[test]
    fn probability_only_flips_the_branch() {
        let s = sample(3);
        let lo = ConfusionConfig { probability: 0.0, ..ConfusionConfig::default() };
        let hi = ConfusionConfig { probability: 1.0, ..ConfusionConfig::default() };
        let a = toy_separator(&s, &lo).unwrap();
        let b = toy_separator(&s, &hi).unwrap();
        assert!(!a.confused && b.confused);
        // Same noise realization, mirrored speech content.
        let swapped = toy_separator(&s.swapped(), &lo).unwrap();
        assert_eq!(a.estimate.len(), swapped.estimate.len());
    }

    #[test]
    fn rejects_bad_config() {
        let s = sample(0);
        for cfg in [
            ConfusionConfig { probability: 1.5, ..ConfusionConfig::default() },
            ConfusionConfig { leakage: 1.0, ..ConfusionConfig::default() },
            ConfusionConfig { noise_snr_db: Some(f64::NAN), ..ConfusionConfig::default() },
        ] {
            assert!(toy_separator(&s, &cfg).is_err());
        }
    }
}
