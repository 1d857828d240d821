//! Run configuration: one flat TOML document covering every stage.
//!
//! Values resolve as built-in defaults, then the config file, then
//! command-line flags. The seed falls back to `CONFUSIONKIT_SEED` when
//! neither the file nor a flag sets it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::WavFormat;
use crate::error::{Error, Result};
use crate::evaluation::AnalysisConfig;
use crate::losses::Scheme;
use crate::postfilter::{Variant, DEFAULT_GRID_STEP};
use crate::seed::derive_seed;
use crate::simulator::{ConfusionConfig, CorpusConfig};
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "CONFUSIONKIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream. `None` defers to the environment.
    pub seed: Option<u64>,

    pub speakers: usize,
    pub samples: usize,
    pub duration_s: f64,
    pub confusion_probability: f64,
    pub leakage: f64,
    /// Separator noise SNR in dB; `inf` turns the noise off.
    pub noise_snr_db: f64,
    pub wav_format: WavFormat,

    pub scheme: Scheme,
    pub beta: f64,
    pub margin: f64,
    pub support_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    /// Noise SNR of the estimates seen during training; `inf` is noise-free.
    pub train_noise_snr_db: f64,

    pub variant: Variant,
    pub grid_step: f64,

    pub quadrant_threshold_db: f64,
    pub confusion_threshold_db: f64,
    pub analysis_margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::with_seed(0);
        let train = TrainConfig::default();
        let analysis = AnalysisConfig::default();
        Self {
            seed: None,
            speakers: corpus.speakers,
            samples: corpus.samples,
            duration_s: corpus.duration_s,
            confusion_probability: corpus.confusion.probability,
            leakage: corpus.confusion.leakage,
            noise_snr_db: corpus.confusion.noise_snr_db.unwrap_or(f64::INFINITY),
            wav_format: corpus.wav_format,
            scheme: train.scheme,
            beta: train.beta,
            margin: train.margin,
            support_size: train.support_size,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            embed_dim: train.embed_dim,
            train_noise_snr_db: train.separator.noise_snr_db.unwrap_or(f64::INFINITY),
            variant: Variant::Linear,
            grid_step: DEFAULT_GRID_STEP,
            quadrant_threshold_db: analysis.quadrant_threshold_db,
            confusion_threshold_db: analysis.confusion_threshold_db,
            analysis_margin: analysis.margin,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills an unset seed from `env_seed` (normally `CONFUSIONKIT_SEED`), else 0.
    pub fn resolve_seed(&mut self, env_seed: Option<&str>) -> Result<u64> {
        if self.seed.is_none() {
            self.seed = match env_seed {
                Some(text) => Some(text.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("{SEED_ENV} must be an unsigned integer, got {text:?}"))
                })?),
                None => Some(0),
            };
        }
        Ok(self.seed())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn finite(db: f64) -> Option<f64> {
        db.is_finite().then_some(db)
    }

    /// Separator settings; its stream is derived from the root seed.
    pub fn confusion(&self) -> ConfusionConfig {
        ConfusionConfig {
            probability: self.confusion_probability,
            leakage: self.leakage,
            noise_snr_db: Self::finite(self.noise_snr_db),
            seed: derive_seed(self.seed(), "separator", &[]),
        }
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            speakers: self.speakers,
            samples: self.samples,
            duration_s: self.duration_s,
            seed: self.seed(),
            confusion: self.confusion(),
            wav_format: self.wav_format,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            scheme: self.scheme,
            beta: self.beta,
            margin: self.margin,
            support_size: self.support_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            embed_dim: self.embed_dim,
            seed: derive_seed(self.seed(), "train", &[]),
            separator: ConfusionConfig {
                noise_snr_db: Self::finite(self.train_noise_snr_db),
                ..self.confusion()
            },
        }
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            quadrant_threshold_db: self.quadrant_threshold_db,
            confusion_threshold_db: self.confusion_threshold_db,
            margin: self.analysis_margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus().validate()?;
        self.train().validate()?;
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(Error::InvalidConfig("grid_step must be positive".into()));
        }
        Ok(())
    }
}
