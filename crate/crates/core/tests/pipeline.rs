use confusionkit::audio::{load_wav, si_sdr, CAP_DB};
use confusionkit::embedding::{FrontendConfig, ToyEncoder};
use confusionkit::evaluation::{confusion_rate, summarize, EvalRecord, Stage};
use confusionkit::postfilter::{
    output_file_name, run_pipeline, tune, validation_records, EstimateSource, PipelineOptions, PostFilterParams, Variant,
};
use confusionkit::simulator::{generate_corpus, simulate_samples, ConfusionConfig, CorpusConfig, Manifest};
use tempfile::TempDir;

fn config(samples: usize, p: f64, b: f64, noise: Option<f64>, seed: u64) -> CorpusConfig {
    let mut cfg = CorpusConfig::with_seed(seed);
    cfg.samples = samples;
    cfg.duration_s = 1.0;
    cfg.confusion = ConfusionConfig {
        probability: p,
        leakage: b,
        noise_snr_db: noise,
        ..cfg.confusion
    };
    cfg
}

fn corpus(cfg: &CorpusConfig) -> (TempDir, Manifest) {
    let dir = TempDir::new().unwrap();
    let manifest = generate_corpus(cfg, dir.path()).unwrap();
    (dir, manifest)
}

fn encoder() -> ToyEncoder {
    ToyEncoder::random(16, FrontendConfig::default(), 42).unwrap()
}

fn flag_all() -> PostFilterParams {
    PostFilterParams::Linear { mu: 0.0, lambda: 2.5 }
}

/// Two-sided 99% interval of Binomial(n, p) from the exact pmf.
fn binomial_interval(n: u64, p: f64) -> (u64, u64) {
    let ln_fact = |k: u64| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let pmf: Vec<f64> = (0..=n)
        .map(|k| (ln_fact(n) - ln_fact(k) - ln_fact(n - k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp())
        .collect();
    let mut acc = 0.0;
    let mut lo = 0;
    while acc + pmf[lo as usize] <= 0.005 {
        acc += pmf[lo as usize];
        lo += 1;
    }
    let mut acc = 0.0;
    let mut hi = n;
    while acc + pmf[hi as usize] <= 0.005 {
        acc += pmf[hi as usize];
        hi -= 1;
    }
    (lo, hi)
}

#[test]
fn mixture_is_exact_sum_and_roles_mirror() {
    for sim in simulate_samples(&config(5, 0.1, 0.05, Some(20.0), 1)).unwrap() {
        let s = &sim.sample;
        let worst = s
            .mixture
            .samples
            .iter()
            .zip(s.source_target.samples.iter().zip(&s.source_interferer.samples))
            .map(|(y, (a, b))| (y - (a + b)).abs())
            .fold(0.0, f64::max);
        assert_eq!(worst, 0.0);
        let m = s.swapped();
        assert_eq!(m.mixture, s.mixture);
        assert_eq!((m.source_target.clone(), m.spk_target), (s.source_interferer.clone(), s.spk_interferer));
        assert_eq!(m.swapped(), *s);
    }
}

#[test]
fn subtraction_recovers_target_exactly_without_leakage_or_noise() {
    let cfg = config(30, 0.3, 0.0, None, 2);
    let (dir, manifest) = corpus(&cfg);
    let out = dir.path().join("out");
    let options = PipelineOptions {
        audio_out: Some(out.clone()),
        ..Default::default()
    };
    let source = EstimateSource::Separator(cfg.confusion);
    let records = run_pipeline(&manifest, &encoder(), &flag_all(), &source, &options).unwrap();
    let mut hits = 0;
    for r in records.iter().filter(|r| r.flagged && r.confused == Some(true)) {
        let row = manifest.rows.iter().find(|x| x.sample_id == r.sample_id).unwrap();
        let mut sample = manifest.load_sample(row).unwrap();
        if r.role != sample.role {
            sample = sample.swapped();
        }
        let output = load_wav(out.join(output_file_name(r.sample_id, r.role))).unwrap();
        assert_eq!(si_sdr(&output, &sample.source_target).unwrap(), CAP_DB, "sample {}", r.sample_id);
        hits += 1;
    }
    assert!(hits > 0);
}

#[test]
fn clean_path_estimate_is_the_target() {
    let cfg = config(4, 0.0, 0.0, None, 3);
    let (_dir, manifest) = corpus(&cfg);
    let source = EstimateSource::Separator(cfg.confusion);
    let params = PostFilterParams::disabled(Variant::Rectangular);
    for r in run_pipeline(&manifest, &encoder(), &params, &source, &PipelineOptions::default()).unwrap() {
        assert_eq!(r.confused, Some(false));
        assert!(r.si_sdri_raw > 40.0, "{}", r.si_sdri_raw);
    }
}

#[test]
fn always_confused_separator_is_strongly_negative() {
    let cfg = config(6, 1.0, 0.0, None, 4);
    let (_dir, manifest) = corpus(&cfg);
    let source = EstimateSource::Separator(cfg.confusion);
    let params = PostFilterParams::disabled(Variant::Linear);
    for r in run_pipeline(&manifest, &encoder(), &params, &source, &PipelineOptions::default()).unwrap() {
        assert!(r.si_sdri_raw < -5.0, "{}", r.si_sdri_raw);
    }
}

#[test]
fn planted_confusion_count_is_binomial() {
    let cfg = config(500, 0.1, 0.05, Some(20.0), 5);
    let count = simulate_samples(&cfg).unwrap().iter().filter(|s| s.confused).count() as u64;
    let (lo, hi) = binomial_interval(500, 0.1);
    assert!((lo..=hi).contains(&count), "{count} outside [{lo}, {hi}]");
}

#[test]
fn measured_confusion_rate_tracks_planted_flags() {
    let cfg = config(200, 0.1, 0.0, None, 6);
    let (_dir, manifest) = corpus(&cfg);
    let source = EstimateSource::Separator(cfg.confusion);
    let params = PostFilterParams::disabled(Variant::Linear);
    let records = run_pipeline(&manifest, &encoder(), &params, &source, &PipelineOptions::default()).unwrap();
    let rate = confusion_rate(&records, -5.0, Stage::Raw).unwrap();
    let (lo, hi) = binomial_interval(records.len() as u64, 0.1);
    let count = (rate * records.len() as f64).round() as u64;
    assert!((lo..=hi).contains(&count), "{count} outside [{lo}, {hi}]");
    let agree = records.iter().filter(|r| (r.si_sdri_raw < -5.0) == r.confused.unwrap()).count();
    assert!(agree as f64 >= 0.99 * records.len() as f64, "{agree}/{}", records.len());
}

#[test]
fn confused_estimates_sit_far_from_target_and_near_interferer() {
    let cfg = config(80, 0.3, 0.05, Some(20.0), 7);
    let (_dir, manifest) = corpus(&cfg);
    let source = EstimateSource::Separator(cfg.confusion);
    let params = PostFilterParams::disabled(Variant::Linear);
    let records = run_pipeline(&manifest, &encoder(), &params, &source, &PipelineOptions::default()).unwrap();
    let mean = |f: &dyn Fn(&EvalRecord) -> f64, c: bool| {
        let v: Vec<f64> = records.iter().filter(|r| r.confused == Some(c)).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(&|r| r.pi, true) > mean(&|r| r.pi, false));
    assert!(mean(&|r| r.phi, true) < mean(&|r| r.phi, false));
}

#[test]
fn no_confusions_means_only_false_positive_cost() {
    let cfg = config(40, 0.0, 0.05, Some(20.0), 8);
    let (_dir, manifest) = corpus(&cfg);
    let source = EstimateSource::Separator(cfg.confusion);
    let enc = encoder();
    let tuned = tune(&validation_records(&manifest, &enc, &source).unwrap(), Variant::Linear, 0.1).unwrap();
    let records = run_pipeline(&manifest, &enc, &tuned.params, &source, &PipelineOptions::default()).unwrap();
    assert!(records.iter().all(|r| !r.flagged && r.si_sdri_final == r.si_sdri_raw));

    let sane = PostFilterParams::Rectangular { pi_max: 0.8, phi_max: 0.4 };
    let records = run_pipeline(&manifest, &enc, &sane, &source, &PipelineOptions::default()).unwrap();
    let s = summarize(&records).unwrap();
    let cost: f64 = records.iter().filter(|r| r.flagged).map(|r| r.si_sdri_subtracted - r.si_sdri_raw).sum::<f64>()
        / records.len() as f64;
    assert!((s.mean_si_sdri_final - s.mean_si_sdri_raw - cost).abs() < 1e-9);
    for r in records.iter().filter(|r| !r.flagged) {
        assert_eq!(r.si_sdri_final, r.si_sdri_raw);
    }
}

#[test]
fn tuned_filter_improves_held_out_split() {
    let mut cfg = config(200, 0.15, 0.05, Some(20.0), 9);
    cfg.duration_s = 3.0;
    let (_dir, manifest) = corpus(&cfg);
    let (dev, test) = manifest.split_at_id(100);
    let source = EstimateSource::Separator(cfg.confusion);
    let enc = encoder();
    for variant in [Variant::Rectangular, Variant::Linear] {
        let tuned = tune(&validation_records(&dev, &enc, &source).unwrap(), variant, 0.1).unwrap();
        let records = run_pipeline(&test, &enc, &tuned.params, &source, &PipelineOptions::default()).unwrap();
        let s = summarize(&records).unwrap();
        assert!(s.mean_si_sdri_final > s.mean_si_sdri_raw, "{variant}: {s:?}");
    }
}

#[test]
fn pipeline_is_deterministic() {
    let cfg = config(10, 0.3, 0.05, Some(20.0), 10);
    let (_a, m1) = corpus(&cfg);
    let (_b, m2) = corpus(&cfg);
    let source = EstimateSource::Separator(cfg.confusion);
    let run = |m: &Manifest| run_pipeline(m, &encoder(), &flag_all(), &source, &PipelineOptions::default()).unwrap();
    assert_eq!(run(&m1), run(&m2));
}
