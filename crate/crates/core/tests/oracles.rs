mod common;

use common::*;
use confusionkit::audio::{si_sdr, Waveform, CAP_DB, SAMPLE_RATE};
use confusionkit::losses::{ge2e_raw, prototypical_raw, Ge2eParams};
use confusionkit::postfilter::{
    objective, tune, tune_linear, tune_rectangular, unfiltered_objective, PostFilterParams, SimilarityPair,
    ValidationRecord, Variant,
};
use rand::Rng;

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::new(v, SAMPLE_RATE)
}

#[test]
fn si_sdr_matches_definition() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let n = r.gen_range(100..4000);
        let reference = normal_vec(&mut r, n);
        let noise = normal_vec(&mut r, n);
        let gain = r.gen_range(0.1..3.0);
        let snr = r.gen_range(0.001..5.0);
        let est: Vec<f64> = reference.iter().zip(&noise).map(|(s, e)| gain * s + snr * e).collect();
        let got = si_sdr(&wave(est.clone()), &wave(reference.clone())).unwrap();
        let want = oracle_si_sdr(&est, &reference);
        assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn si_sdr_caps_exact_match() {
    let mut r = rng(3);
    let s = normal_vec(&mut r, 800);
    assert_eq!(si_sdr(&wave(s.clone()), &wave(s.clone())).unwrap(), CAP_DB);
    assert_eq!(oracle_si_sdr(&s, &s), CAP_DB);
}

#[test]
fn prototypical_probabilities_match_softmax() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let dim = r.gen_range(2..8);
        let k = r.gen_range(2..6);
        let queries: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(&mut r, dim)).collect();
        let protos: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut r, dim)).collect();
        let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..k)).collect();
        let out = prototypical_raw(&queries, &labels, &protos);
        for (q, probs) in queries.iter().zip(&out.probabilities) {
            for (a, b) in probs.iter().zip(oracle_prototypical_probs(q, &protos)) {
                assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn ge2e_probabilities_match_softmax() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let dim = r.gen_range(2..8);
        let speakers = r.gen_range(2..5);
        let bank: Vec<Vec<Vec<f64>>> = (0..speakers)
            .map(|_| (0..r.gen_range(2..5)).map(|_| normal_vec(&mut r, dim)).collect())
            .collect();
        let labels: Vec<(usize, Option<usize>)> = (0..5)
            .map(|_| {
                let k = r.gen_range(0..speakers);
                (k, r.gen_bool(0.5).then(|| r.gen_range(0..bank[k].len())))
            })
            .collect();
        let batch: Vec<Vec<f64>> = labels
            .iter()
            .map(|&(k, m)| match m {
                Some(j) => bank[k][j].clone(),
                None => normal_vec(&mut r, dim),
            })
            .collect();
        let params = Ge2eParams {
            w: r.gen_range(0.5..12.0),
            b: r.gen_range(-6.0..2.0),
        };
        let out = ge2e_raw(&batch, &labels, &bank, params);
        for ((x, &(k, m)), probs) in batch.iter().zip(&labels).zip(&out.probabilities) {
            let want = oracle_ge2e_probs(x, k, m, &bank, params.w, params.b);
            for (a, b) in probs.iter().zip(want) {
                assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

fn record_sets() -> Vec<Vec<ValidationRecord>> {
    (0..12u64)
        .map(|s| {
            let n = 1 + (s as usize * 37) % 200;
            random_records(1000 + s, n, s % 2 == 0)
        })
        .collect()
}

#[test]
fn tuners_match_brute_force() {
    for (i, records) in record_sets().iter().enumerate() {
        for (variant, linear) in [(Variant::Rectangular, false), (Variant::Linear, true)] {
            let got = tune(records, variant, 0.1).unwrap();
            let (params, total) = oracle_tune(records, linear);
            assert_eq!(got.params, params, "set {i} {variant}");
            assert_eq!(got.objective, total, "set {i} {variant}");
        }
    }
}

#[test]
fn tuned_objective_never_below_unfiltered() {
    for records in record_sets() {
        let base = unfiltered_objective(&records);
        assert!(tune_rectangular(&records, 0.1).unwrap().objective >= base);
        assert!(tune_linear(&records, 0.1).unwrap().objective >= base);
    }
}

// Confusions planted in the upper-left corner of the (pi, phi) plane with
// a large metric gap: the optimal border must flag exactly those records.
#[test]
fn planted_corner_is_recovered() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let records: Vec<ValidationRecord> = (0..150)
            .map(|i| {
                let confused = r.gen_bool(0.15);
                let (pi, phi) = if confused {
                    (r.gen_range(0.85..1.5), r.gen_range(0.05..0.25))
                } else if r.gen_bool(0.5) {
                    (r.gen_range(0.05..0.75), r.gen_range(0.05..1.5))
                } else {
                    (r.gen_range(0.05..1.5), r.gen_range(0.35..1.5))
                };
                let (raw, sub) = if confused { (-15.0, 15.0) } else { (15.0, -15.0) };
                ValidationRecord {
                    pair: SimilarityPair { index: i, pi, phi },
                    si_sdri_raw: raw,
                    si_sdri_subtracted: sub,
                }
            })
            .collect();
        let planted = records.iter().filter(|x| x.si_sdri_raw < 0.0).count();
        let best = 15.0 * records.len() as f64;
        let rec = tune_rectangular(&records, 0.1).unwrap();
        assert_eq!(rec.objective, best, "seed {seed}");
        assert_eq!(rec.flagged, planted);
        assert_eq!(objective(&records, &rec.params), (best, planted));
        let (oracle_params, _) = oracle_tune(&records, false);
        assert_eq!(rec.params, oracle_params);
    }
}

#[test]
fn degenerate_optimum_on_clean_records() {
    let records = random_records(5, 50, false)
        .into_iter()
        .map(|mut x| {
            x.si_sdri_raw = 10.0;
            x.si_sdri_subtracted = -10.0;
            x
        })
        .collect::<Vec<_>>();
    assert_eq!(
        tune_rectangular(&records, 0.1).unwrap().params,
        PostFilterParams::Rectangular { pi_max: 0.0, phi_max: 0.0 }
    );
    assert_eq!(
        tune_linear(&records, 0.1).unwrap().params,
        PostFilterParams::Linear { mu: 0.0, lambda: -1.0 }
    );
}
