//! Corpus-level statistics over pipeline records: quadrant counts of the
//! per-speaker SI-SDRi plane, confusion rates, the enrollment margin
//! analysis, detection scores, and report emission.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::Role;

pub const DEFAULT_QUADRANT_THRESHOLD_DB: f64 = 5.0;
pub const DEFAULT_CONFUSION_THRESHOLD_DB: f64 = -5.0;
pub const DEFAULT_MARGIN: f64 = 0.1;

/// One (sample, role) outcome of the pipeline.
///
/// `sim_target` / `sim_interferer` are cosine similarities between the
/// enrollment embedding and the target / interferer source embeddings;
/// `confused` is the separator's ground truth when it is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: usize,
    pub role: Role,
    pub spk_target: usize,
    pub spk_interferer: usize,
    pub pi: f64,
    pub phi: f64,
    pub flagged: bool,
    pub si_sdri_raw: f64,
    pub si_sdri_subtracted: f64,
    pub si_sdri_final: f64,
    pub sim_target: f64,
    pub sim_interferer: f64,
    pub confused: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// The separator output before post-filtering.
    Raw,
    /// After the post-filter decision.
    Final,
}

impl EvalRecord {
    pub fn si_sdri(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Raw => self.si_sdri_raw,
            Stage::Final => self.si_sdri_final,
        }
    }
}

/// Counts over the (speaker 1, speaker 2) SI-SDRi plane. A value counts as
/// above the threshold only when strictly greater, so every pair lands in
/// exactly one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantStats {
    pub threshold_db: f64,
    pub both_above: usize,
    pub first_below_only: usize,
    pub second_below_only: usize,
    pub both_below: usize,
}

impl QuadrantStats {
    pub fn total(&self) -> usize {
        self.both_above + self.first_below_only + self.second_below_only + self.both_below
    }
}

pub fn quadrant_counts(pairs: &[(f64, f64)], threshold_db: f64) -> Result<QuadrantStats> {
    if pairs.is_empty() {
        return Err(Error::Empty("record pairs"));
    }
    let mut q = QuadrantStats {
        threshold_db,
        both_above: 0,
        first_below_only: 0,
        second_below_only: 0,
        both_below: 0,
    };
    for &(a, b) in pairs {
        match (a > threshold_db, b > threshold_db) {
            (true, true) => q.both_above += 1,
            (false, true) => q.first_below_only += 1,
            (true, false) => q.second_below_only += 1,
            (false, false) => q.both_below += 1,
        }
    }
    Ok(q)
}

/// Pairs the two role records of every sample as (primary, swapped).
pub fn role_pairs(records: &[EvalRecord]) -> Result<Vec<(&EvalRecord, &EvalRecord)>> {
    let mut by_id: BTreeMap<usize, [Option<&EvalRecord>; 2]> = BTreeMap::new();
    for r in records {
        by_id.entry(r.sample_id).or_default()[r.role.index() as usize] = Some(r);
    }
    by_id
        .into_iter()
        .map(|(id, slot)| match slot {
            [Some(a), Some(b)] => Ok((a, b)),
            _ => Err(Error::UnpairedRecord(id)),
        })
        .collect()
}

pub fn quadrant_stats(records: &[EvalRecord], threshold_db: f64, stage: Stage) -> Result<QuadrantStats> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let pairs: Vec<(f64, f64)> = role_pairs(records)?
        .into_iter()
        .map(|(a, b)| (a.si_sdri(stage), b.si_sdri(stage)))
        .collect();
    quadrant_counts(&pairs, threshold_db)
}

/// Fraction of role records whose SI-SDRi is below `threshold_db`.
pub fn confusion_rate(records: &[EvalRecord], threshold_db: f64, stage: Stage) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let hits = records.iter().filter(|r| r.si_sdri(stage) < threshold_db).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Where enrollments sit relative to their two sources in embedding space.
///
/// A record is on the correct side when `sim_target > sim_interferer` and
/// beyond the margin when `sim_target - sim_interferer > margin`. The
/// confusion fractions are taken over records whose raw SI-SDRi falls below
/// the confusion threshold; they are `None` when there are no such records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginAnalysis {
    pub margin: f64,
    pub records: usize,
    pub fraction_correct_side: f64,
    pub fraction_beyond_margin: f64,
    pub confusion_records: usize,
    pub confusion_fraction_wrong_side: Option<f64>,
    pub confusion_fraction_within_margin: Option<f64>,
}

pub fn margin_analysis(records: &[EvalRecord], margin: f64, confusion_threshold_db: f64) -> Result<MarginAnalysis> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let gap = |r: &EvalRecord| r.sim_target - r.sim_interferer;
    let n = records.len() as f64;
    let confused: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| r.si_sdri_raw < confusion_threshold_db)
        .collect();
    let frac = |pred: &dyn Fn(f64) -> bool| -> Option<f64> {
        (!confused.is_empty())
            .then(|| confused.iter().filter(|r| pred(gap(r))).count() as f64 / confused.len() as f64)
    };
    Ok(MarginAnalysis {
        margin,
        records: records.len(),
        fraction_correct_side: records.iter().filter(|r| gap(r) > 0.0).count() as f64 / n,
        fraction_beyond_margin: records.iter().filter(|r| gap(r) > margin).count() as f64 / n,
        confusion_records: confused.len(),
        confusion_fraction_wrong_side: frac(&|g| g <= 0.0),
        confusion_fraction_within_margin: frac(&|g| g <= margin),
    })
}

/// Post-filter flags scored against ground-truth confusion. Precision is
/// `None` when nothing was flagged, recall when nothing was confused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Returns `None` when no record carries ground truth.
pub fn detection_scores(records: &[EvalRecord]) -> Option<DetectionScores> {
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    let mut any = false;
    for r in records {
        let Some(truth) = r.confused else { continue };
        any = true;
        match (r.flagged, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    any.then(|| DetectionScores {
        true_positive: tp,
        false_positive: fp,
        false_negative: fneg,
        true_negative: tn,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub flagged: usize,
    pub mean_si_sdri_raw: f64,
    pub mean_si_sdri_final: f64,
}

pub fn summarize(records: &[EvalRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let n = records.len() as f64;
    Ok(Summary {
        records: records.len(),
        flagged: records.iter().filter(|r| r.flagged).count(),
        mean_si_sdri_raw: records.iter().map(|r| r.si_sdri_raw).sum::<f64>() / n,
        mean_si_sdri_final: records.iter().map(|r| r.si_sdri_final).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub quadrant_threshold_db: f64,
    pub confusion_threshold_db: f64,
    pub margin: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            quadrant_threshold_db: DEFAULT_QUADRANT_THRESHOLD_DB,
            confusion_threshold_db: DEFAULT_CONFUSION_THRESHOLD_DB,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisStats {
    pub config: AnalysisConfig,
    pub summary: Summary,
    pub quadrants_raw: QuadrantStats,
    pub quadrants_final: QuadrantStats,
    pub confusion_rate_raw: f64,
    pub confusion_rate_final: f64,
    pub margin: MarginAnalysis,
    pub detection: Option<DetectionScores>,
}

pub fn analyze(records: &[EvalRecord], config: &AnalysisConfig) -> Result<AnalysisStats> {
    Ok(AnalysisStats {
        config: *config,
        summary: summarize(records)?,
        quadrants_raw: quadrant_stats(records, config.quadrant_threshold_db, Stage::Raw)?,
        quadrants_final: quadrant_stats(records, config.quadrant_threshold_db, Stage::Final)?,
        confusion_rate_raw: confusion_rate(records, config.confusion_threshold_db, Stage::Raw)?,
        confusion_rate_final: confusion_rate(records, config.confusion_threshold_db, Stage::Final)?,
        margin: margin_analysis(records, config.margin, config.confusion_threshold_db)?,
        detection: detection_scores(records),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

/// The JSON report: statistics plus every record as scatter data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub stats: AnalysisStats,
    pub records: Vec<EvalRecord>,
}

/// Path of the statistics table written next to a CSV report.
pub fn stats_csv_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}_stats.csv"))
}

/// Writes a report. JSON puts stats and records in one document; CSV
/// writes the records to `path` and a `metric,value` table to
/// [`stats_csv_path`].
pub fn emit_report(records: &[EvalRecord], stats: &AnalysisStats, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() || stats.summary.records == 0 {
        return Err(Error::Empty("report"));
    }
    match format {
        ReportFormat::Json => {
            let report = Report {
                stats: stats.clone(),
                records: records.to_vec(),
            };
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::json(path, e))?;
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            write_records_csv(records, path)?;
            let stats_path = stats_csv_path(path);
            let mut w = csv::Writer::from_path(&stats_path).map_err(|e| Error::csv(&stats_path, e))?;
            w.write_record(["metric", "value"]).map_err(|e| Error::csv(&stats_path, e))?;
            for (k, v) in flatten_stats(stats) {
                w.write_record([k, v]).map_err(|e| Error::csv(&stats_path, e))?;
            }
            w.flush().map_err(|e| Error::io(&stats_path, e))
        }
    }
}

fn flatten_stats(stats: &AnalysisStats) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            serde_json::Value::Null => out.push((prefix.to_string(), String::new())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    // AnalysisStats only holds numbers, options and plain structs.
    walk("", &serde_json::to_value(stats).expect("stats serialize"), &mut out);
    out
}

pub fn write_records_csv(records: &[EvalRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// The compact per-sample table `sample_id,pi,phi,flagged,si_sdri_raw,si_sdri_final`
/// (primary role only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: usize,
    pub pi: f64,
    pub phi: f64,
    #[serde(with = "bit")]
    pub flagged: bool,
    pub si_sdri_raw: f64,
    pub si_sdri_final: f64,
}

mod bit {
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

pub fn write_sample_rows(records: &[EvalRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Header written by hand so it is present even with no rows.
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(["sample_id", "pi", "phi", "flagged", "si_sdri_raw", "si_sdri_final"])
        .map_err(|e| Error::csv(path, e))?;
    for r in records.iter().filter(|r| r.role == Role::Primary) {
        let row = SampleRow {
            sample_id: r.sample_id,
            pi: r.pi,
            phi: r.phi,
            flagged: r.flagged,
            si_sdri_raw: r.si_sdri_raw,
            si_sdri_final: r.si_sdri_final,
        };
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
