use serde::{Deserialize, Serialize};

use crate::audio::{mix, truncate_random, Waveform};
use crate::error::{Error, Result};
use crate::seed;

use super::speaker::{synth_utterance, SyntheticSpeaker};

/// Gain applied to every utterance before mixing so that two sources at
/// peak 0.9 still sum inside `[-1, 1]`.
pub const SOURCE_GAIN: f64 = 0.5;

/// Extra audio synthesized before the random crop.
const CROP_SLACK_S: f64 = 0.5;

/// Which speaker of a mixture plays the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// The manifest's target.
    #[default]
    Primary,
    /// Roles swapped: the manifest's interferer is the target.
    Swapped,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Primary => "primary",
            Role::Swapped => "swapped",
        }
    }

    pub fn index(self) -> u64 {
        match self {
            Role::Primary => 0,
            Role::Swapped => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionSample {
    pub index: usize,
    pub role: Role,
    pub mixture: Waveform,
    pub source_target: Waveform,
    pub source_interferer: Waveform,
    pub enroll_target: Waveform,
    pub enroll_interferer: Waveform,
    pub spk_target: usize,
    pub spk_interferer: usize,
}

impl ExtractionSample {
    /// The same mixture with target and interferer exchanged.
    pub fn swapped(&self) -> ExtractionSample {
        ExtractionSample {
            index: self.index,
            role: match self.role {
                Role::Primary => Role::Swapped,
                Role::Swapped => Role::Primary,
            },
            mixture: self.mixture.clone(),
            source_target: self.source_interferer.clone(),
            source_interferer: self.source_target.clone(),
            enroll_target: self.enroll_interferer.clone(),
            enroll_interferer: self.enroll_target.clone(),
            spk_target: self.spk_interferer,
            spk_interferer: self.spk_target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mixture.len();
        for w in [&self.source_target, &self.source_interferer] {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: w.len(),
                });
            }
            if w.sample_rate != self.mixture.sample_rate {
                return Err(Error::SampleRateMismatch {
                    left: self.mixture.sample_rate,
                    right: w.sample_rate,
                });
            }
        }
        if n == 0 {
            return Err(Error::Empty("mixture"));
        }
        Ok(())
    }
}

/// One randomly cropped, level-adjusted utterance on the 16-bit grid.
pub fn corpus_utterance(spk: &SyntheticSpeaker, duration_s: f64, seed: u64) -> Result<Waveform> {
    let long = synth_utterance(spk, duration_s + CROP_SLACK_S, seed)?;
    Ok(truncate_random(&long, duration_s, seed)?
        .scaled(SOURCE_GAIN)
        .quantized_pcm16())
}

/// Builds a two-speaker sample from four independent utterances: one
/// source and one enrollment per speaker. Sources are quantized to the
/// 16-bit grid before mixing, so `y = s_t + s_i` holds exactly and
/// survives a PCM16 file round trip.
pub fn make_extraction_sample(
    spk_t: &SyntheticSpeaker,
    spk_i: &SyntheticSpeaker,
    duration_s: f64,
    seed: u64,
) -> Result<ExtractionSample> {
    if spk_t.id == spk_i.id {
        return Err(Error::InvalidConfig(format!(
            "target and interferer must differ (both {})",
            spk_t.id
        )));
    }
    let utt = |spk: &SyntheticSpeaker, slot: u64| {
        corpus_utterance(spk, duration_s, seed::derive_seed(seed, "sample-utterance", &[slot]))
    };
    let source_target = utt(spk_t, 0)?;
    let source_interferer = utt(spk_i, 1)?;
    let enroll_target = utt(spk_t, 2)?;
    let enroll_interferer = utt(spk_i, 3)?;
    let mixture = mix(&source_target, &source_interferer)?;
    Ok(ExtractionSample {
        index: 0,
        role: Role::Primary,
        mixture,
        source_target,
        source_interferer,
        enroll_target,
        enroll_interferer,
        spk_target: spk_t.id,
        spk_interferer: spk_i.id,
    })
}
