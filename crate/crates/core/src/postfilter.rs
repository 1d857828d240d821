//! Inference-time rectification of target confusion.
//!
//! Each estimate is scored by its embedding distance to the target
//! enrollment (`pi`) and to the interferer enrollment (`phi`). A tuned
//! decision border flags likely confusions, and a flagged estimate is
//! replaced by `mixture - estimate`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{dot, save_wav, si_sdr_improvement, load_wav, WavFormat, Waveform};
use crate::embedding::{cosine_similarity, l2_distance_normed, Embedding, Frontend, ToyEncoder};
use crate::error::{Error, Result};
use crate::evaluation::EvalRecord;
use crate::simulator::{toy_separator, ConfusionConfig, ExtractionSample, Manifest, Role};

pub const DEFAULT_GRID_STEP: f64 = 0.1;

/// Grid values are snapped to this many decimal digits, so `3 * 0.1`
/// is stored as `0.3`.
const GRID_DIGITS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub index: usize,
    pub pi: f64,
    pub phi: f64,
}

pub fn similarity_features(
    index: usize,
    estimate: &Waveform,
    enroll_target: &Waveform,
    enroll_interferer: &Waveform,
    enc: &ToyEncoder,
) -> Result<SimilarityPair> {
    let frontend = enc.frontend()?;
    let e = |w: &Waveform| enc.encode_with(&frontend, w);
    pair_from_embeddings(index, &e(estimate)?, &e(enroll_target)?, &e(enroll_interferer)?)
}

fn pair_from_embeddings(index: usize, est: &Embedding, et: &Embedding, ef: &Embedding) -> Result<SimilarityPair> {
    Ok(SimilarityPair {
        index,
        pi: l2_distance_normed(est, et)?,
        phi: l2_distance_normed(est, ef)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "rec", alias = "rectangular")]
    Rectangular,
    #[serde(rename = "lin", alias = "linear")]
    Linear,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rec" | "rectangular" => Ok(Self::Rectangular),
            "lin" | "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidConfig(format!("unknown post-filter variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rectangular => "rec",
            Self::Linear => "lin",
        })
    }
}

/// A decision border. Rectangular flags `pi > pi_max && phi < phi_max`;
/// linear flags `phi < mu * pi + lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile", into = "ParamsFile")]
pub enum PostFilterParams {
    Rectangular { pi_max: f64, phi_max: f64 },
    Linear { mu: f64, lambda: f64 },
}

/// On-disk shape: `{variant, Pi, Phi, mu, lambda}` with the inactive pair null.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    variant: Variant,
    #[serde(rename = "Pi")]
    pi: Option<f64>,
    #[serde(rename = "Phi")]
    phi: Option<f64>,
    mu: Option<f64>,
    lambda: Option<f64>,
}

impl From<PostFilterParams> for ParamsFile {
    fn from(p: PostFilterParams) -> Self {
        match p {
            PostFilterParams::Rectangular { pi_max, phi_max } => Self {
                variant: Variant::Rectangular,
                pi: Some(pi_max),
                phi: Some(phi_max),
                mu: None,
                lambda: None,
            },
            PostFilterParams::Linear { mu, lambda } => Self {
                variant: Variant::Linear,
                pi: None,
                phi: None,
                mu: Some(mu),
                lambda: Some(lambda),
            },
        }
    }
}

impl TryFrom<ParamsFile> for PostFilterParams {
    type Error = String;

    fn try_from(f: ParamsFile) -> std::result::Result<Self, String> {
        let p = match (f.variant, f.pi, f.phi, f.mu, f.lambda) {
            (Variant::Rectangular, Some(pi_max), Some(phi_max), _, _) => Self::Rectangular { pi_max, phi_max },
            (Variant::Linear, _, _, Some(mu), Some(lambda)) => Self::Linear { mu, lambda },
            (v, ..) => return Err(format!("missing thresholds for variant {v}")),
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

impl PostFilterParams {
    /// Never flags anything.
    pub fn disabled(variant: Variant) -> Self {
        match variant {
            Variant::Rectangular => Self::Rectangular {
                pi_max: 0.0,
                phi_max: 0.0,
            },
            Variant::Linear => Self::Linear { mu: 0.0, lambda: -1.0 },
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            Self::Rectangular { .. } => Variant::Rectangular,
            Self::Linear { .. } => Variant::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = match *self {
            Self::Rectangular { pi_max, phi_max } => (pi_max, phi_max),
            Self::Linear { mu, lambda } => (mu, lambda),
        };
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidConfig("post-filter thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

pub fn decide_confused(p: &SimilarityPair, params: &PostFilterParams) -> bool {
    match *params {
        PostFilterParams::Rectangular { pi_max, phi_max } => p.pi > pi_max && p.phi < phi_max,
        PostFilterParams::Linear { mu, lambda } => p.phi < mu * p.pi + lambda,
    }
}

/// A tuning-set record: the features plus the SI-SDRi of both branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub pair: SimilarityPair,
    /// SI-SDRi of the estimate as produced.
    pub si_sdri_raw: f64,
    /// SI-SDRi of `mixture - estimate`.
    pub si_sdri_subtracted: f64,
}

impl From<&EvalRecord> for ValidationRecord {
    fn from(r: &EvalRecord) -> Self {
        Self {
            pair: SimilarityPair {
                index: r.sample_id,
                pi: r.pi,
                phi: r.phi,
            },
            si_sdri_raw: r.si_sdri_raw,
            si_sdri_subtracted: r.si_sdri_subtracted,
        }
    }
}

/// Outcome of a grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub params: PostFilterParams,
    pub objective: f64,
    pub flagged: usize,
}

/// Summed SI-SDRi under `params`, accumulated in record order, and the
/// number of records flagged.
pub fn objective(records: &[ValidationRecord], params: &PostFilterParams) -> (f64, usize) {
    let mut total = 0.0;
    let mut flagged = 0;
    for r in records {
        if decide_confused(&r.pair, params) {
            total += r.si_sdri_subtracted;
            flagged += 1;
        } else {
            total += r.si_sdri_raw;
        }
    }
    (total, flagged)
}

pub fn unfiltered_objective(records: &[ValidationRecord]) -> f64 {
    records.iter().fold(0.0, |acc, r| acc + r.si_sdri_raw)
}

pub fn quantize(x: f64) -> f64 {
    let q = (x * GRID_DIGITS).round() / GRID_DIGITS;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// `lo, lo + step, ..., hi`, each value quantized.
pub fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) || !(hi >= lo) {
        return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| quantize(lo + k as f64 * step)).collect())
}

/// Exhaustive search in lexicographic parameter order. A candidate replaces
/// the incumbent only if it scores higher, or scores the same while
/// flagging fewer records; remaining ties keep the earlier candidate.
fn search(
    records: &[ValidationRecord],
    first: &[f64],
    second: &[f64],
    make: impl Fn(f64, f64) -> PostFilterParams,
) -> Result<Tuned> {
    if records.is_empty() {
        return Err(Error::Empty("validation records"));
    }
    let mut best: Option<Tuned> = None;
    for &a in first {
        for &b in second {
            let params = make(a, b);
            let (value, flagged) = objective(records, &params);
            let better = match &best {
                None => true,
                Some(t) => value > t.objective || (value == t.objective && flagged < t.flagged),
            };
            if better {
                best = Some(Tuned {
                    params,
                    objective: value,
                    flagged,
                });
            }
        }
    }
    Ok(best.expect("grid is never empty"))
}

/// Searches `pi_max, phi_max` over `[0, 2]`.
pub fn tune_rectangular(records: &[ValidationRecord], grid_step: f64) -> Result<Tuned> {
    let g = grid(0.0, 2.0, grid_step)?;
    search(records, &g, &g, |pi_max, phi_max| PostFilterParams::Rectangular { pi_max, phi_max })
}

/// Searches `mu` over `[0, 2]` and `lambda` over `[-1, 1]`.
pub fn tune_linear(records: &[ValidationRecord], grid_step: f64) -> Result<Tuned> {
    let mus = grid(0.0, 2.0, grid_step)?;
    let lambdas = grid(-1.0, 1.0, grid_step)?;
    search(records, &mus, &lambdas, |mu, lambda| PostFilterParams::Linear { mu, lambda })
}

pub fn tune(records: &[ValidationRecord], variant: Variant, grid_step: f64) -> Result<Tuned> {
    match variant {
        Variant::Rectangular => tune_rectangular(records, grid_step),
        Variant::Linear => tune_linear(records, grid_step),
    }
}

/// Flagged: `y - estimate`; otherwise the estimate unchanged.
pub fn apply_postfilter(mixture: &Waveform, estimate: &Waveform, flagged: bool) -> Result<Waveform> {
    if !flagged {
        if estimate.len() != mixture.len() {
            return Err(Error::LengthMismatch {
                left: mixture.len(),
                right: estimate.len(),
            });
        }
        return Ok(estimate.clone());
    }
    mixture.subtract(estimate)
}

/// Scales `estimate` by `argmin_a ||y - a * estimate||`. Meant for estimates
/// of unknown gain; the toy separator already works at mixture scale.
pub fn rescale_to_mixture(mixture: &Waveform, estimate: &Waveform) -> Result<Waveform> {
    if estimate.len() != mixture.len() {
        return Err(Error::LengthMismatch {
            left: mixture.len(),
            right: estimate.len(),
        });
    }
    let energy = estimate.energy();
    if energy == 0.0 {
        return Ok(estimate.clone());
    }
    Ok(estimate.scaled(dot(&mixture.samples, &estimate.samples) / energy))
}

/// Where estimates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimateSource {
    /// Run the toy separator on every sample and role.
    Separator(ConfusionConfig),
    /// Read `{id:05}_{role}_est.wav` files; they are rescaled to the mixture.
    Directory(PathBuf),
}

pub fn estimate_file_name(sample_id: usize, role: Role) -> String {
    format!("{sample_id:05}_{}_est.wav", role.name())
}

pub fn output_file_name(sample_id: usize, role: Role) -> String {
    format!("{sample_id:05}_{}_final.wav", role.name())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOptions {
    /// Directory for estimate and post-filtered WAVs; nothing is written when `None`.
    pub audio_out: Option<PathBuf>,
    pub wav_format: WavFormat,
}

struct Analyzer<'a> {
    enc: &'a ToyEncoder,
    frontend: Frontend,
}

/// Everything measured for one (sample, role), before any decision.
struct RoleMeasure {
    estimate: Waveform,
    pair: SimilarityPair,
    si_sdri_raw: f64,
    si_sdri_subtracted: f64,
    sim_target: f64,
    sim_interferer: f64,
    confused: Option<bool>,
}

impl<'a> Analyzer<'a> {
    fn new(enc: &'a ToyEncoder) -> Result<Self> {
        Ok(Self {
            enc,
            frontend: enc.frontend()?,
        })
    }

    fn embed(&self, w: &Waveform) -> Result<Embedding> {
        self.enc.encode_with(&self.frontend, w)
    }

    fn measure_sample(&self, sample: &ExtractionSample, source: &EstimateSource) -> Result<[RoleMeasure; 2]> {
        let swapped = sample.swapped();
        let enroll = [self.embed(&sample.enroll_target)?, self.embed(&sample.enroll_interferer)?];
        let sources = [self.embed(&sample.source_target)?, self.embed(&sample.source_interferer)?];
        let mut out = Vec::with_capacity(2);
        for (k, s) in [sample, &swapped].into_iter().enumerate() {
            let (estimate, confused) = match source {
                EstimateSource::Separator(cfg) => {
                    let sep = toy_separator(s, cfg)?;
                    (sep.estimate, Some(sep.confused))
                }
                EstimateSource::Directory(dir) => {
                    let raw = load_wav(dir.join(estimate_file_name(s.index, s.role)))?;
                    (rescale_to_mixture(&s.mixture, &raw)?, None)
                }
            };
            let est = self.embed(&estimate)?;
            let (et, ef) = (&enroll[k], &enroll[1 - k]);
            let (st, si) = (&sources[k], &sources[1 - k]);
            let subtracted = s.mixture.subtract(&estimate)?;
            out.push(RoleMeasure {
                pair: pair_from_embeddings(s.index, &est, et, ef)?,
                si_sdri_raw: si_sdr_improvement(&estimate, &s.mixture, &s.source_target)?,
                si_sdri_subtracted: si_sdr_improvement(&subtracted, &s.mixture, &s.source_target)?,
                sim_target: cosine_similarity(et, st)?,
                sim_interferer: cosine_similarity(et, si)?,
                estimate,
                confused,
            });
        }
        let second = out.pop().expect("two roles");
        let first = out.pop().expect("two roles");
        Ok([first, second])
    }
}

fn roles_of(sample: &ExtractionSample) -> [(Role, usize, usize); 2] {
    [
        (Role::Primary, sample.spk_target, sample.spk_interferer),
        (Role::Swapped, sample.spk_interferer, sample.spk_target),
    ]
}

/// Tuning records for every sample of `manifest`, both roles, in manifest
/// order. Uses ground-truth sources to score the two branches.
pub fn validation_records(manifest: &Manifest, enc: &ToyEncoder, source: &EstimateSource) -> Result<Vec<ValidationRecord>> {
    let analyzer = Analyzer::new(enc)?;
    let mut records = Vec::with_capacity(2 * manifest.rows.len());
    for row in &manifest.rows {
        let sample = manifest.load_sample(row)?;
        for m in analyzer.measure_sample(&sample, source)? {
            records.push(ValidationRecord {
                pair: m.pair,
                si_sdri_raw: m.si_sdri_raw,
                si_sdri_subtracted: m.si_sdri_subtracted,
            });
        }
    }
    Ok(records)
}

/// Runs estimate -> features -> decision -> subtraction for both roles of
/// every sample. The decision sees only the features; the sources are
/// used afterwards to score the outputs.
pub fn run_pipeline(
    manifest: &Manifest,
    enc: &ToyEncoder,
    params: &PostFilterParams,
    source: &EstimateSource,
    options: &PipelineOptions,
) -> Result<Vec<EvalRecord>> {
    params.validate()?;
    let analyzer = Analyzer::new(enc)?;
    if let Some(dir) = &options.audio_out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut records = Vec::with_capacity(2 * manifest.rows.len());
    for row in &manifest.rows {
        let sample = manifest.load_sample(row)?;
        let measures = analyzer.measure_sample(&sample, source)?;
        for ((role, spk_target, spk_interferer), m) in roles_of(&sample).into_iter().zip(measures) {
            let flagged = decide_confused(&m.pair, params);
            let final_si_sdri = if flagged { m.si_sdri_subtracted } else { m.si_sdri_raw };
            if let Some(dir) = &options.audio_out {
                let output = apply_postfilter(&sample.mixture, &m.estimate, flagged)?;
                save_wav(&m.estimate, dir.join(estimate_file_name(sample.index, role)), options.wav_format)?;
                save_wav(&output, dir.join(output_file_name(sample.index, role)), options.wav_format)?;
            }
            records.push(EvalRecord {
                sample_id: sample.index,
                role,
                spk_target,
                spk_interferer,
                pi: m.pair.pi,
                phi: m.pair.phi,
                flagged,
                si_sdri_raw: m.si_sdri_raw,
                si_sdri_subtracted: m.si_sdri_subtracted,
                si_sdri_final: final_si_sdri,
                sim_target: m.sim_target,
                sim_interferer: m.sim_interferer,
                confused: m.confused,
            });
        }
    }
    Ok(records)
}
