//! Synthetic test bed: harmonic-formant speakers, two-speaker mixtures and
//! a toy separator with controllable target confusion.

mod corpus;
mod sample;
mod separator;
mod speaker;

pub use corpus::{
    generate_corpus, separator_for, simulate_samples, CorpusConfig, CorpusMeta, LabeledCorpus,
    LabeledUtterance, Manifest, ManifestRow, SimulatedSample, CORPUS_META_FILE, MANIFEST_FILE,
    MANIFEST_HEADER,
};
pub use sample::{corpus_utterance, make_extraction_sample, ExtractionSample, Role, SOURCE_GAIN};
pub use separator::{toy_separator, ConfusionConfig, Separation};
pub use speaker::{
    harmonic_amplitudes, jittered_voice, synth_utterance, SyntheticSpeaker, UtteranceVoice,
    MAX_FREQ_HZ, MIN_DURATION_S, MIN_FREQ_HZ, UTTERANCE_PEAK,
};
