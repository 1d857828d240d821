//! Shared fixtures: random gradient-check instances and brute-force
//! oracles written independently of the library code they check.
#![allow(dead_code)]

use confusionkit::audio::CAP_DB;
use confusionkit::losses::{
    ce_speaker_loss, finite_difference_check, ge2e_raw, prototypical_raw, triplet_raw, ClassifierHead, Ge2eParams,
};
use confusionkit::postfilter::{PostFilterParams, SimilarityPair, ValidationRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn chunks(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(|c| c.to_vec()).collect()
}

/// Max relative gradient error of the triplet loss at a random active point.
pub fn triplet_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.gen_range(3..=8);
    let x = normal_vec(&mut r, 3 * dim);
    let (u, rest) = x.split_at(dim);
    let (v, w) = rest.split_at(dim);
    let d_gap = {
        let dp: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dn: f64 = u.iter().zip(w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        dn - dp
    };
    // Keep the hinge active and well away from its kink.
    let margin = d_gap.max(0.0) + r.gen_range(0.2..1.0);
    let eval = |p: &[f64]| {
        let out = triplet_raw(&p[..dim], &p[dim..2 * dim], &p[2 * dim..], margin);
        let mut g = out.grad_anchor;
        g.extend(out.grad_positive);
        g.extend(out.grad_negative);
        (out.value, g)
    };
    finite_difference_check(eval, &x, FD_EPS).unwrap()
}

pub fn prototypical_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.gen_range(3..=6);
    let k = r.gen_range(2..=5);
    let q = r.gen_range(1..=6);
    let labels: Vec<usize> = (0..q).map(|_| r.gen_range(0..k)).collect();
    let x = normal_vec(&mut r, (q + k) * dim);
    let eval = |p: &[f64]| {
        let (qs, ps) = p.split_at(q * dim);
        let out = prototypical_raw(&chunks(qs, dim), &labels, &chunks(ps, dim));
        let mut g: Vec<f64> = out.grad_queries.concat();
        g.extend(out.grad_prototypes.concat());
        (out.value, g)
    };
    finite_difference_check(eval, &x, FD_EPS).unwrap()
}

/// GE2E over batch embeddings, bank embeddings, `w` and `b`.
pub fn ge2e_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.gen_range(3..=6);
    let speakers = r.gen_range(2..=4);
    let sizes: Vec<usize> = (0..speakers).map(|_| r.gen_range(2..=4)).collect();
    let n = r.gen_range(1..=5);
    let labels: Vec<(usize, Option<usize>)> = (0..n)
        .map(|_| {
            let k = r.gen_range(0..speakers);
            let member = r.gen_bool(0.5).then(|| r.gen_range(0..sizes[k]));
            (k, member)
        })
        .collect();
    let bank_len: usize = sizes.iter().sum::<usize>() * dim;
    let mut x = normal_vec(&mut r, n * dim + bank_len);
    x.push(r.gen_range(0.5..3.0));
    x.push(r.gen_range(-2.0..2.0));
    let eval = |p: &[f64]| {
        let batch = chunks(&p[..n * dim], dim);
        let mut members = Vec::with_capacity(speakers);
        let mut at = n * dim;
        for &s in &sizes {
            members.push(chunks(&p[at..at + s * dim], dim));
            at += s * dim;
        }
        let params = Ge2eParams { w: p[at], b: p[at + 1] };
        let out = ge2e_raw(&batch, &labels, &members, params);
        let mut g: Vec<f64> = out.grad_batch.concat();
        for list in &out.grad_bank {
            g.extend(list.concat());
        }
        g.push(out.grad_w);
        g.push(out.grad_b);
        (out.value, g)
    };
    finite_difference_check(eval, &x, FD_EPS).unwrap()
}

/// Cross-entropy through a linear head: input, weights and bias.
pub fn ce_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.gen_range(3..=8);
    let classes = r.gen_range(2..=10);
    let label = r.gen_range(0..classes);
    // Weights scaled like an initialization so the softmax is not saturated.
    let mut x = normal_vec(&mut r, dim + classes * dim + classes);
    let scale = 1.0 / (dim as f64).sqrt();
    x[dim..].iter_mut().for_each(|v| *v *= scale);
    let eval = |p: &[f64]| {
        let head = ClassifierHead {
            n_classes: classes,
            dim,
            weights: p[dim..dim + classes * dim].to_vec(),
            bias: p[dim + classes * dim..].to_vec(),
        };
        let out = ce_speaker_loss(&head.logits(&p[..dim]), label).unwrap();
        let mut gw = vec![0.0; classes * dim];
        let mut gb = vec![0.0; classes];
        let mut g = head.backward(&p[..dim], &out.grad_logits, &mut gw, &mut gb);
        g.extend(gw);
        g.extend(gb);
        (out.value, g)
    };
    finite_difference_check(eval, &x, FD_EPS).unwrap()
}

/// SI-SDR straight from the definition: project, split, take the energy ratio.
pub fn oracle_si_sdr(est: &[f64], reference: &[f64]) -> f64 {
    let n = est.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        num += est[i] * reference[i];
        den += reference[i] * reference[i];
    }
    let projected: Vec<f64> = reference.iter().map(|s| num / den * s).collect();
    let residual: Vec<f64> = est.iter().zip(&projected).map(|(e, p)| e - p).collect();
    let pt: f64 = projected.iter().map(|p| p * p).sum();
    let pe: f64 = residual.iter().map(|e| e * e).sum();
    let db = 10.0 * (pt / (pe + 1e-8)).log10();
    db.clamp(-CAP_DB, CAP_DB)
}

/// Eq.-4 style likelihoods without any log-sum-exp shift.
pub fn oracle_prototypical_probs(query: &[f64], prototypes: &[Vec<f64>]) -> Vec<f64> {
    let weights: Vec<f64> = prototypes
        .iter()
        .map(|c| {
            let d: f64 = query.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (-d).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.iter().map(|w| w / z).collect()
}

/// Eq.-7 style likelihoods, bias included, exclude-self by rebuilding the
/// member list without the probe.
pub fn oracle_ge2e_probs(x: &[f64], label: usize, member: Option<usize>, bank: &[Vec<Vec<f64>>], w: f64, b: f64) -> Vec<f64> {
    let mut logits = Vec::new();
    for (k, list) in bank.iter().enumerate() {
        let kept: Vec<&Vec<f64>> = list
            .iter()
            .enumerate()
            .filter(|(j, _)| !(k == label && Some(*j) == member))
            .map(|(_, e)| e)
            .collect();
        let mut c = vec![0.0; x.len()];
        for e in &kept {
            for i in 0..c.len() {
                c[i] += e[i] / kept.len() as f64;
            }
        }
        let dot: f64 = x.iter().zip(&c).map(|(a, b)| a * b).sum();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nc: f64 = c.iter().map(|a| a * a).sum::<f64>().sqrt();
        logits.push(w * dot / (nx * nc) + b);
    }
    let e: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Random tuning records. Coarse sets put features on a 0.05 lattice and
/// metrics on integers so that exact objective ties actually occur.
pub fn random_records(seed: u64, n: usize, coarse: bool) -> Vec<ValidationRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let confused = r.gen_bool(0.2);
            let (pi, phi) = if confused {
                (r.gen_range(0.6..1.6), r.gen_range(0.1..1.0))
            } else {
                (r.gen_range(0.1..1.0), r.gen_range(0.6..1.6))
            };
            let (raw, sub) = if confused {
                (r.gen_range(-30.0..-5.0), r.gen_range(5.0..30.0))
            } else {
                (r.gen_range(5.0..30.0), r.gen_range(-30.0..-5.0))
            };
            let snap = |v: f64, q: f64| if coarse { (v / q).round() * q } else { v };
            ValidationRecord {
                pair: SimilarityPair {
                    index: i,
                    pi: snap(pi, 0.05),
                    phi: snap(phi, 0.05),
                },
                si_sdri_raw: snap(raw, 1.0),
                si_sdri_subtracted: snap(sub, 1.0),
            }
        })
        .collect()
}

/// Brute-force tuner: scores every grid candidate, then sorts by
/// (objective desc, flagged asc, parameters asc).
pub fn oracle_tune(records: &[ValidationRecord], linear: bool) -> (PostFilterParams, f64) {
    let mut all = Vec::new();
    for i in 0..=20 {
        for j in 0..=20 {
            let a = i as f64 / 10.0;
            let b = if linear { (j as f64 - 10.0) / 10.0 } else { j as f64 / 10.0 };
            let mut total = 0.0;
            let mut flagged = 0usize;
            for rec in records {
                let (pi, phi) = (rec.pair.pi, rec.pair.phi);
                let hit = if linear { phi < a * pi + b } else { pi > a && phi < b };
                if hit {
                    flagged += 1;
                    total += rec.si_sdri_subtracted;
                } else {
                    total += rec.si_sdri_raw;
                }
            }
            all.push((total, flagged, a, b));
        }
    }
    all.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(x.1.cmp(&y.1))
            .then(x.2.total_cmp(&y.2))
            .then(x.3.total_cmp(&y.3))
    });
    let (total, _, a, b) = all[0];
    let params = if linear {
        PostFilterParams::Linear { mu: a, lambda: b }
    } else {
        PostFilterParams::Rectangular { pi_max: a, phi_max: b }
    };
    (params, total)
}
