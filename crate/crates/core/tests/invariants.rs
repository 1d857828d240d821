mod common;

use common::oracle_tune;
use confusionkit::audio::{si_sdr, Waveform, SAMPLE_RATE};
use confusionkit::embedding::Embedding;
use confusionkit::evaluation::{confusion_rate, quadrant_counts, quadrant_stats, EvalRecord, Stage};
use confusionkit::losses::{ce_speaker_loss, ge2e_centroid, ge2e_raw, prototypical_raw, triplet_raw, Ge2eParams, UtteranceBank};
use confusionkit::postfilter::{
    objective, tune_linear, tune_rectangular, unfiltered_objective, PostFilterParams, SimilarityPair, ValidationRecord,
};
use confusionkit::simulator::Role;
use proptest::prelude::*;

fn vecs(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), n)
}

fn not_tiny(v: &[f64]) -> bool {
    v.iter().map(|x| x * x).sum::<f64>() > 1e-3
}

fn record() -> impl Strategy<Value = ValidationRecord> {
    (0.0..2.0f64, 0.0..2.0f64, -30.0..30.0f64, -30.0..30.0f64).prop_map(|(pi, phi, raw, sub)| ValidationRecord {
        pair: SimilarityPair { index: 0, pi, phi },
        si_sdri_raw: raw,
        si_sdri_subtracted: sub,
    })
}

fn eval_pairs(values: &[(f64, f64)]) -> Vec<EvalRecord> {
    values
        .iter()
        .enumerate()
        .flat_map(|(id, &(a, b))| {
            [(Role::Primary, a), (Role::Swapped, b)].map(|(role, v)| EvalRecord {
                sample_id: id,
                role,
                spk_target: 0,
                spk_interferer: 1,
                pi: 0.0,
                phi: 0.0,
                flagged: false,
                si_sdri_raw: v,
                si_sdri_subtracted: -v,
                si_sdri_final: v,
                sim_target: 0.0,
                sim_interferer: 0.0,
                confused: None,
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prototypical_probabilities_are_a_distribution(
        q in vecs(1..5, 4), p in vecs(2..6, 4), pick in prop::collection::vec(0usize..100, 5)
    ) {
        let labels: Vec<usize> = q.iter().zip(&pick).map(|(_, l)| l % p.len()).collect();
        let out = prototypical_raw(&q, &labels, &p);
        for probs in &out.probabilities {
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(probs.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn ge2e_probabilities_are_a_distribution(
        bank in prop::collection::vec(vecs(2..4, 3), 2..5), w in 0.1..20.0f64, b in -10.0..10.0f64
    ) {
        prop_assume!(bank.iter().flatten().all(|v| not_tiny(v)));
        let batch: Vec<Vec<f64>> = bank.iter().map(|l| l[0].clone()).collect();
        let labels: Vec<(usize, Option<usize>)> = (0..bank.len()).map(|k| (k, Some(0))).collect();
        let out = ge2e_raw(&batch, &labels, &bank, Ge2eParams { w, b });
        for probs in &out.probabilities {
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(probs.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn ce_probabilities_are_a_distribution(logits in prop::collection::vec(-20.0..20.0f64, 2..12)) {
        let out = ce_speaker_loss(&logits, 0).unwrap();
        prop_assert!((out.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.probabilities.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn triplet_nonnegative_and_zero_past_margin(v in vecs(3..4, 5), margin in 0.0..2.0f64) {
        let out = triplet_raw(&v[0], &v[1], &v[2], margin);
        prop_assert!(out.value >= 0.0);
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if d(&v[0], &v[2]) >= d(&v[0], &v[1]) + margin {
            prop_assert_eq!(out.value, 0.0);
        }
    }

    #[test]
    fn prototypical_loss_invariant_to_speaker_order(
        q in vecs(1..5, 3), p in vecs(2..6, 3), pick in prop::collection::vec(0usize..100, 5), rot in 0usize..10
    ) {
        let k = p.len();
        let labels: Vec<usize> = q.iter().zip(&pick).map(|(_, l)| l % k).collect();
        let base = prototypical_raw(&q, &labels, &p);
        // Rotate speaker order by `rot`; new index of old speaker j is (j + rot) % k.
        let mut rotated = p.clone();
        for (j, c) in p.iter().enumerate() {
            rotated[(j + rot) % k] = c.clone();
        }
        let moved: Vec<usize> = labels.iter().map(|l| (l + rot) % k).collect();
        let out = prototypical_raw(&q, &moved, &rotated);
        prop_assert!((base.value - out.value).abs() < 1e-12);
        for (pa, pb) in base.probabilities.iter().zip(&out.probabilities) {
            for j in 0..k {
                prop_assert!((pa[j] - pb[(j + rot) % k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ge2e_loss_invariant_to_speaker_order(bank in prop::collection::vec(vecs(2..4, 3), 2..5), rot in 0usize..10) {
        prop_assume!(bank.iter().flatten().all(|v| not_tiny(v)));
        let k = bank.len();
        let batch: Vec<Vec<f64>> = bank.iter().map(|l| l[1].clone()).collect();
        let labels: Vec<(usize, Option<usize>)> = (0..k).map(|i| (i, Some(1))).collect();
        let params = Ge2eParams { w: 5.0, b: -2.0 };
        let base = ge2e_raw(&batch, &labels, &bank, params);
        let mut rotated = bank.clone();
        for (j, l) in bank.iter().enumerate() {
            rotated[(j + rot) % k] = l.clone();
        }
        let moved: Vec<(usize, Option<usize>)> = labels.iter().map(|&(l, m)| ((l + rot) % k, m)).collect();
        let out = ge2e_raw(&batch, &moved, &rotated, params);
        prop_assert!((base.value - out.value).abs() < 1e-12);
    }

    #[test]
    fn exclude_self_centroid_is_mean_of_the_rest(list in vecs(2..6, 4), pick in 0usize..100) {
        let j = pick % list.len();
        let bank = UtteranceBank::new(vec![7, 8], vec![list.clone(), list.clone()]).unwrap();
        let got = ge2e_centroid(&bank, 7, Some(j)).unwrap();
        let rest: Vec<&Vec<f64>> = list.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v).collect();
        for d in 0..4 {
            let want = rest.iter().map(|v| v[d]).sum::<f64>() / rest.len() as f64;
            prop_assert!((got[d] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn si_sdr_is_scale_invariant(
        s in prop::collection::vec(-1.0..1.0f64, 64..512), noise in prop::collection::vec(-0.3..0.3f64, 512),
        gain in 0.01..100.0f64
    ) {
        prop_assume!(not_tiny(&s));
        let est: Vec<f64> = s.iter().zip(&noise).map(|(a, e)| a + e).collect();
        let r = Waveform::new(s.clone(), SAMPLE_RATE);
        let a = si_sdr(&Waveform::new(est.clone(), SAMPLE_RATE), &r).unwrap();
        let scaled: Vec<f64> = est.iter().map(|x| x * gain).collect();
        let b = si_sdr(&Waveform::new(scaled, SAMPLE_RATE), &r).unwrap();
        prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
    }

    #[test]
    fn embeddings_have_unit_norm(v in prop::collection::vec(-5.0..5.0f64, 2..32)) {
        prop_assume!(not_tiny(&v));
        prop_assert!((Embedding::normalize(v).unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quadrants_partition_the_records(
        pairs in prop::collection::vec((-20.0..40.0f64, -20.0..40.0f64), 1..80), t in -10.0..20.0f64
    ) {
        prop_assert_eq!(quadrant_counts(&pairs, t).unwrap().total(), pairs.len());
        let records = eval_pairs(&pairs);
        prop_assert_eq!(quadrant_stats(&records, t, Stage::Raw).unwrap().total(), pairs.len());
    }

    #[test]
    fn confusion_rate_is_monotone_in_threshold(
        pairs in prop::collection::vec((-20.0..40.0f64, -20.0..40.0f64), 1..80), t in -20.0..20.0f64, dt in 0.0..10.0f64
    ) {
        let records = eval_pairs(&pairs);
        let lo = confusion_rate(&records, t, Stage::Raw).unwrap();
        let hi = confusion_rate(&records, t + dt, Stage::Raw).unwrap();
        prop_assert!(lo <= hi);
        prop_assert!((0.0..=1.0).contains(&lo));
    }

    #[test]
    fn rectangular_flags_shrink_with_pi_and_grow_with_phi(
        records in prop::collection::vec(record(), 1..100), a in 0.0..2.0f64, b in 0.0..2.0f64, d in 0.0..1.0f64
    ) {
        let flagged = |pi_max, phi_max| objective(&records, &PostFilterParams::Rectangular { pi_max, phi_max }).1;
        prop_assert!(flagged(a + d, b) <= flagged(a, b));
        prop_assert!(flagged(a, b + d) >= flagged(a, b));
    }

    #[test]
    fn tuned_objective_dominates_unfiltered(records in prop::collection::vec(record(), 1..60)) {
        let base = unfiltered_objective(&records);
        let rec = tune_rectangular(&records, 0.1).unwrap();
        let lin = tune_linear(&records, 0.1).unwrap();
        prop_assert!(rec.objective >= base);
        prop_assert!(lin.objective >= base);
        prop_assert_eq!(rec.params, oracle_tune(&records, false).0);
        prop_assert_eq!(lin.params, oracle_tune(&records, true).0);
    }
}
