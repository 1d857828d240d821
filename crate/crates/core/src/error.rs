use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample {0} lacks one of its two role records")]
    UnpairedRecord(usize),

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("expected mono audio, found {channels} channels in {path}")]
    ChannelCount { path: PathBuf, channels: u16 },

    #[error("unsupported WAV encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },

    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("waveform too short: need {needed} samples, have {actual}")]
    TooShort { needed: usize, actual: usize },

    #[error("reference signal has zero energy")]
    ZeroReference,

    #[error("embedding is not L2-normalized (norm {norm})")]
    Unnormalized { norm: f64 },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown speaker label {0}")]
    UnknownLabel(usize),

    #[error("need at least {needed} speakers, found {actual}")]
    TooFewSpeakers { needed: usize, actual: usize },

    #[error("cannot exclude probe from a singleton bank for speaker {0}")]
    SingletonBank(usize),

    #[error("speaker {speaker} has {actual} utterances, need at least {needed}")]
    TooFewUtterances {
        speaker: usize,
        needed: usize,
        actual: usize,
    },

    #[error("non-finite loss{0}")]
    NonFiniteLoss(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
