use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::{corpus_utterance, make_extraction_sample, ExtractionSample};
use super::separator::{toy_separator, ConfusionConfig};
use super::speaker::SyntheticSpeaker;
use crate::audio::{load_wav, save_wav, WavFormat, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CORPUS_META_FILE: &str = "corpus.json";
pub const MANIFEST_HEADER: [&str; 9] = [
    "sample_id",
    "mixture",
    "source_target",
    "source_interferer",
    "enroll_target",
    "enroll_interferer",
    "spk_target",
    "spk_interferer",
    "confused_flag",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub speakers: usize,
    pub samples: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub confusion: ConfusionConfig,
    pub wav_format: WavFormat,
}

impl CorpusConfig {
    /// Default corpus for `seed`; the separator stream is derived from it.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            speakers: 8,
            samples: 100,
            duration_s: 3.0,
            seed,
            confusion: ConfusionConfig {
                seed: seed::derive_seed(seed, "separator", &[]),
                ..ConfusionConfig::default()
            },
            wav_format: WavFormat::Pcm16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers < 2 {
            return Err(Error::TooFewSpeakers {
                needed: 2,
                actual: self.speakers,
            });
        }
        if self.samples == 0 {
            return Err(Error::Empty("corpus samples"));
        }
        if !(self.duration_s >= super::MIN_DURATION_S) {
            return Err(Error::InvalidConfig(format!(
                "duration must be at least {} s",
                super::MIN_DURATION_S
            )));
        }
        self.confusion.validate()
    }

    pub fn speaker_set(&self) -> Vec<SyntheticSpeaker> {
        (0..self.speakers)
            .map(|id| SyntheticSpeaker::random(id, self.seed))
            .collect()
    }
}

/// A simulated sample together with the separator's branch choice.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    pub sample: ExtractionSample,
    pub confused: bool,
}

/// Generates the samples of a corpus in memory.
pub fn simulate_samples(cfg: &CorpusConfig) -> Result<Vec<SimulatedSample>> {
    cfg.validate()?;
    let speakers = cfg.speaker_set();
    (0..cfg.samples)
        .map(|m| {
            let mut rng = seed::rng_for(cfg.seed, "pair", &[m as u64]);
            let t = rng.gen_range(0..cfg.speakers);
            let mut i = rng.gen_range(0..cfg.speakers - 1);
            if i >= t {
                i += 1;
            }
            let audio_seed = seed::derive_seed(cfg.seed, "audio", &[m as u64]);
            let mut sample = make_extraction_sample(&speakers[t], &speakers[i], cfg.duration_s, audio_seed)?;
            sample.index = m;
            let confused = cfg.confusion.is_confused(&sample);
            Ok(SimulatedSample { sample, confused })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub config: CorpusConfig,
    pub sample_rate: u32,
    pub speakers: Vec<SyntheticSpeaker>,
}

impl CorpusMeta {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: usize,
    pub mixture: String,
    pub source_target: String,
    pub source_interferer: String,
    pub enroll_target: String,
    pub enroll_interferer: String,
    pub spk_target: usize,
    pub spk_interferer: usize,
    /// Ground truth for test oracles only; never read at inference.
    #[serde(with = "flag")]
    pub confused_flag: bool,
}

mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("flag must be 0 or 1, got {other}"))),
        }
    }
}

/// A manifest with its rows; relative paths resolve against `dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                detail: format!("unexpected header {:?}", headers),
            });
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Ok(Self {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        if self.rows.is_empty() {
            writer
                .write_record(MANIFEST_HEADER)
                .map_err(|e| Error::csv(path, e))?;
        }
        for row in &self.rows {
            writer.serialize(row).map_err(|e| Error::csv(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn load_sample(&self, row: &ManifestRow) -> Result<ExtractionSample> {
        let load = |rel: &str| load_wav(self.resolve(rel));
        let sample = ExtractionSample {
            index: row.sample_id,
            role: Default::default(),
            mixture: load(&row.mixture)?,
            source_target: load(&row.source_target)?,
            source_interferer: load(&row.source_interferer)?,
            enroll_target: load(&row.enroll_target)?,
            enroll_interferer: load(&row.enroll_interferer)?,
            spk_target: row.spk_target,
            spk_interferer: row.spk_interferer,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Rows with `sample_id < cut` and the rest, sharing `dir`.
    pub fn split_at_id(&self, cut: usize) -> (Manifest, Manifest) {
        let (a, b): (Vec<_>, Vec<_>) = self.rows.iter().cloned().partition(|r| r.sample_id < cut);
        (
            Manifest { dir: self.dir.clone(), rows: a },
            Manifest { dir: self.dir.clone(), rows: b },
        )
    }
}

fn write_wav(dir: &Path, name: &str, w: &Waveform, format: WavFormat) -> Result<String> {
    let rel = format!("wav/{name}");
    save_wav(w, dir.join(&rel), format)?;
    Ok(rel)
}

/// Writes every sample's audio plus `manifest.csv` and `corpus.json`.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let samples = simulate_samples(cfg)?;
    let mut rows = Vec::with_capacity(samples.len());
    for sim in &samples {
        let s = &sim.sample;
        let m = s.index;
        let f = cfg.wav_format;
        rows.push(ManifestRow {
            sample_id: m,
            mixture: write_wav(out_dir, &format!("{m:05}_mix.wav"), &s.mixture, f)?,
            source_target: write_wav(out_dir, &format!("{m:05}_src_target.wav"), &s.source_target, f)?,
            source_interferer: write_wav(out_dir, &format!("{m:05}_src_interf.wav"), &s.source_interferer, f)?,
            enroll_target: write_wav(out_dir, &format!("{m:05}_enr_target.wav"), &s.enroll_target, f)?,
            enroll_interferer: write_wav(out_dir, &format!("{m:05}_enr_interf.wav"), &s.enroll_interferer, f)?,
            spk_target: s.spk_target,
            spk_interferer: s.spk_interferer,
            confused_flag: sim.confused,
        });
    }
    let manifest = Manifest {
        dir: out_dir.to_path_buf(),
        rows,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    let meta = CorpusMeta {
        config: cfg.clone(),
        sample_rate: SAMPLE_RATE,
        speakers: cfg.speaker_set(),
    };
    let meta_path = out_dir.join(CORPUS_META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(manifest)
}

/// Re-runs the separator on a loaded sample using the corpus metadata.
pub fn separator_for(meta: &CorpusMeta) -> impl Fn(&ExtractionSample) -> Result<super::Separation> + '_ {
    move |s| toy_separator(s, &meta.config.confusion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub speaker: usize,
    pub waveform: Waveform,
}

/// Speaker-labeled utterances for encoder training and evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCorpus {
    pub utterances: Vec<LabeledUtterance>,
}

impl LabeledCorpus {
    /// `per_speaker` fresh utterances for every speaker.
    pub fn synthesize(speakers: &[SyntheticSpeaker], per_speaker: usize, duration_s: f64, seed: u64) -> Result<Self> {
        let mut utterances = Vec::with_capacity(speakers.len() * per_speaker);
        for spk in speakers {
            for j in 0..per_speaker {
                let s = seed::derive_seed(seed, "labeled-utterance", &[spk.id as u64, j as u64]);
                utterances.push(LabeledUtterance {
                    speaker: spk.id,
                    waveform: corpus_utterance(spk, duration_s, s)?,
                });
            }
        }
        Ok(Self { utterances })
    }

    /// Every distinct utterance file referenced by a manifest, labeled
    /// with its speaker.
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for row in &manifest.rows {
            for (rel, spk) in [
                (&row.source_target, row.spk_target),
                (&row.enroll_target, row.spk_target),
                (&row.source_interferer, row.spk_interferer),
                (&row.enroll_interferer, row.spk_interferer),
            ] {
                seen.entry(rel.clone()).or_insert(spk);
            }
        }
        let utterances = seen
            .into_iter()
            .map(|(rel, speaker)| {
                Ok(LabeledUtterance {
                    speaker,
                    waveform: load_wav(manifest.resolve(&rel))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { utterances })
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    /// Sorted distinct speaker ids.
    pub fn speakers(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.utterances.iter().map(|u| u.speaker).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Utterance indices grouped by speaker, in `speakers()` order.
    pub fn indices_by_speaker(&self) -> Vec<(usize, Vec<usize>)> {
        self.speakers()
            .into_iter()
            .map(|spk| {
                let idx = self
                    .utterances
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| u.speaker == spk)
                    .map(|(i, _)| i)
                    .collect();
                (spk, idx)
            })
            .collect()
    }
}
