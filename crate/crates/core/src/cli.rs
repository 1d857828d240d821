//! Command-line front end: `simulate | train | tune | run | analyze`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::audio::WavFormat;
use crate::config::{RunConfig, SEED_ENV};
use crate::embedding::ToyEncoder;
use crate::error::{Error, Result};
use crate::evaluation::{analyze, emit_report, read_records_csv, summarize, write_records_csv, write_sample_rows, ReportFormat, Summary};
use crate::losses::Scheme;
use crate::postfilter::{
    run_pipeline, tune, unfiltered_objective, validation_records, EstimateSource, PipelineOptions, PostFilterParams,
    Variant,
};
use crate::simulator::{generate_corpus, CorpusMeta, LabeledCorpus, Manifest, CORPUS_META_FILE, MANIFEST_FILE};
use crate::trainer::train_encoder;

#[derive(Debug, Parser)]
#[command(name = "confusionkit", version, about = "Target-confusion toolkit for two-speaker target speaker extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-speaker corpus (WAVs, manifest.csv, corpus.json).
    Simulate(SimulateArgs),
    /// Train the toy speaker encoder under a metric-learning scheme.
    Train(TrainArgs),
    /// Grid-search post-filter thresholds on a validation manifest.
    Tune(TuneArgs),
    /// Run separation, confusion detection and subtraction over a manifest.
    Run(RunArgs),
    /// Summarize pipeline records: quadrants, confusion rate, margins.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root seed (falls back to the config file, then CONFUSIONKIT_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Utterance length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Confusion probability of the toy separator.
    #[arg(long)]
    pub probability: Option<f64>,
    /// Leakage fraction of the other speaker in estimates.
    #[arg(long)]
    pub leakage: Option<f64>,
    /// Estimate noise SNR in dB, or `off`.
    #[arg(long, value_parser = parse_snr)]
    pub noise_snr_db: Option<f64>,
    /// `pcm16` or `float32`.
    #[arg(long, value_parser = parse_wav_format)]
    pub wav_format: Option<WavFormat>,
    /// Also write dev.csv (ids below N) and test.csv (the rest).
    #[arg(long, value_name = "N")]
    pub split: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Manifest whose utterances form the training corpus.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for encoder.json and train_report.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// TL1 | TL2 | PL1 | PL2 | GL1 | GL2 | CE | none
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Triplet margin alpha.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Support utterances per speaker for the prototypical loss.
    #[arg(long)]
    pub support: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Directory of `{id}_{role}_est.wav` estimates; the toy separator is used when absent.
    #[arg(long, value_name = "DIR")]
    pub estimates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    /// Output params JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// `rec` or `lin`.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[command(flatten)]
    pub estimates: EstimateArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory for WAVs and record tables.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub estimates: EstimateArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// eval_records.csv written by `run`.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// `csv` or `json`.
    #[arg(long, default_value = "json")]
    pub format: ReportFormat,
    /// Quadrant threshold in dB.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// SI-SDRi below this counts as confusion.
    #[arg(long, allow_hyphen_values = true)]
    pub confusion_threshold: Option<f64>,
    /// Enrollment similarity margin.
    #[arg(long)]
    pub margin: Option<f64>,
}

fn parse_snr(s: &str) -> std::result::Result<f64, String> {
    match s {
        "off" | "inf" => Ok(f64::INFINITY),
        _ => s.parse().map_err(|_| format!("expected a number or `off`, got {s:?}")),
    }
}

fn parse_wav_format(s: &str) -> std::result::Result<WavFormat, String> {
    match s.to_ascii_lowercase().as_str() {
        "pcm16" => Ok(WavFormat::Pcm16),
        "float32" => Ok(WavFormat::Float32),
        _ => Err(format!("expected pcm16 or float32, got {s:?}")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn resolve(common: &Common, flags: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    flags(&mut cfg);
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    let env = std::env::var(SEED_ENV).ok();
    cfg.resolve_seed(env.as_deref())?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_nonempty_manifest(path: &Path) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    if m.rows.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    Ok(m)
}

/// Estimates come from `--estimates`, else from the separator recorded in
/// the corpus metadata next to the manifest, else from the run config.
fn estimate_source(args: &EstimateArgs, manifest: &Manifest, cfg: &RunConfig) -> Result<EstimateSource> {
    if let Some(dir) = &args.estimates {
        return Ok(EstimateSource::Directory(dir.clone()));
    }
    let meta_path = manifest.dir.join(CORPUS_META_FILE);
    if meta_path.exists() {
        return Ok(EstimateSource::Separator(CorpusMeta::load(&meta_path)?.config.confusion));
    }
    Ok(EstimateSource::Separator(cfg.confusion()))
}

#[derive(Serialize)]
struct TuneMeta {
    seed: u64,
    manifest: PathBuf,
    grid_step: f64,
    records: usize,
    objective: f64,
    unfiltered_objective: f64,
    flagged: usize,
    params: PostFilterParams,
}

#[derive(Serialize)]
struct RunMeta {
    seed: u64,
    manifest: PathBuf,
    params: PostFilterParams,
    summary: Summary,
}

/// Executes one subcommand and returns the line printed on success.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = resolve(&a.common, |c| {
                set(&mut c.speakers, a.speakers);
                set(&mut c.samples, a.samples);
                set(&mut c.duration_s, a.duration);
                set(&mut c.confusion_probability, a.probability);
                set(&mut c.leakage, a.leakage);
                set(&mut c.noise_snr_db, a.noise_snr_db);
                set(&mut c.wav_format, a.wav_format);
            })?;
            create_dir(&a.out)?;
            let manifest = generate_corpus(&cfg.corpus(), &a.out)?;
            let confused = manifest.rows.iter().filter(|r| r.confused_flag).count();
            if let Some(cut) = a.split {
                let (dev, test) = manifest.split_at_id(cut);
                dev.save(a.out.join("dev.csv"))?;
                test.save(a.out.join("test.csv"))?;
            }
            Ok(format!(
                "wrote {} samples ({} confused) to {}",
                manifest.rows.len(),
                confused,
                a.out.join(MANIFEST_FILE).display()
            ))
        }
        Command::Train(a) => {
            let cfg = resolve(&a.common, |c| {
                set(&mut c.scheme, a.scheme);
                set(&mut c.beta, a.beta);
                set(&mut c.margin, a.margin);
                set(&mut c.support_size, a.support);
                set(&mut c.learning_rate, a.lr);
                set(&mut c.epochs, a.epochs);
                set(&mut c.batch_size, a.batch_size);
                set(&mut c.embed_dim, a.embed_dim);
            })?;
            let manifest = load_nonempty_manifest(&a.manifest)?;
            let corpus = LabeledCorpus::from_manifest(&manifest)?;
            let model = train_encoder(&corpus, &cfg.train())?;
            create_dir(&a.out)?;
            model.encoder.save(a.out.join("encoder.json"))?;
            write_json(&a.out.join("train_report.json"), &model.report)?;
            let q = model.report.final_quality;
            Ok(format!(
                "trained {} for {} epochs: inter/intra {:.3}, nearest-centroid accuracy {:.3}",
                cfg.scheme,
                cfg.epochs,
                q.separation_ratio(),
                q.nearest_centroid_accuracy
            ))
        }
        Command::Tune(a) => {
            let cfg = resolve(&a.common, |c| {
                set(&mut c.variant, a.variant);
                set(&mut c.grid_step, a.grid_step);
            })?;
            let manifest = load_nonempty_manifest(&a.manifest)?;
            let encoder = ToyEncoder::load(&a.encoder)?;
            let source = estimate_source(&a.estimates, &manifest, &cfg)?;
            let records = validation_records(&manifest, &encoder, &source)?;
            let tuned = tune(&records, cfg.variant, cfg.grid_step)?;
            tuned.params.save(&a.out)?;
            let meta = TuneMeta {
                seed: cfg.seed(),
                manifest: a.manifest.clone(),
                grid_step: cfg.grid_step,
                records: records.len(),
                objective: tuned.objective,
                unfiltered_objective: unfiltered_objective(&records),
                flagged: tuned.flagged,
                params: tuned.params,
            };
            write_json(&a.out.with_extension("meta.json"), &meta)?;
            Ok(format!(
                "tuned {} border on {} records: objective {:.3} dB (unfiltered {:.3} dB), {} flagged",
                cfg.variant,
                records.len(),
                tuned.objective,
                meta.unfiltered_objective,
                tuned.flagged
            ))
        }
        Command::Run(a) => {
            let cfg = resolve(&a.common, |_| {})?;
            let manifest = load_nonempty_manifest(&a.manifest)?;
            let encoder = ToyEncoder::load(&a.encoder)?;
            let params = PostFilterParams::load(&a.params)?;
            let source = estimate_source(&a.estimates, &manifest, &cfg)?;
            create_dir(&a.out)?;
            let options = PipelineOptions {
                audio_out: Some(a.out.join("wav")),
                wav_format: cfg.wav_format,
            };
            let records = run_pipeline(&manifest, &encoder, &params, &source, &options)?;
            write_records_csv(&records, a.out.join("eval_records.csv"))?;
            write_sample_rows(&records, a.out.join("records.csv"))?;
            let summary = summarize(&records)?;
            write_json(
                &a.out.join("run_meta.json"),
                &RunMeta {
                    seed: cfg.seed(),
                    manifest: a.manifest.clone(),
                    params,
                    summary,
                },
            )?;
            Ok(format!(
                "processed {} role records: mean SI-SDRi {:.3} dB -> {:.3} dB, {} flagged",
                summary.records, summary.mean_si_sdri_raw, summary.mean_si_sdri_final, summary.flagged
            ))
        }
        Command::Analyze(a) => {
            let cfg = resolve(&a.common, |c| {
                set(&mut c.quadrant_threshold_db, a.threshold);
                set(&mut c.confusion_threshold_db, a.confusion_threshold);
                set(&mut c.analysis_margin, a.margin);
            })?;
            let records = read_records_csv(&a.records)?;
            let stats = analyze(&records, &cfg.analysis())?;
            emit_report(&records, &stats, &a.out, a.format)?;
            Ok(format!(
                "analyzed {} records: confusion rate {:.4} -> {:.4}",
                records.len(),
                stats.confusion_rate_raw,
                stats.confusion_rate_final
            ))
        }
    }
}
