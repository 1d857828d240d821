//! Desk-scale training of the toy encoder under one auxiliary objective.
//!
//! Each step draws a batch of `(target, interferer)` speaker pairs, builds
//! a two-speaker sample per pair from corpus utterances, runs the toy
//! separator, and descends `beta * L_ML`. The reconstruction term of the
//! multi-task loss does not depend on the encoder, so it only shows up in
//! the reported total.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mix, si_sdr, Waveform};
use crate::embedding::{euclidean, EncodeTrace, Embedding, FrontendConfig, ToyEncoder, DEFAULT_EMBED_DIM};
use crate::error::{Error, Result};
use crate::losses::{
    ce_speaker_loss, ge2e_raw, multitask_loss, prototypical_raw, triplet_raw, ClassifierHead, Ge2eParams,
    Scheme,
};
use crate::seed;
use crate::simulator::{toy_separator, ConfusionConfig, ExtractionSample, LabeledCorpus, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub beta: f64,
    pub margin: f64,
    pub support_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub seed: u64,
    /// Separator used to produce estimates for the scheme-2 objectives and
    /// the reconstruction term. Its seed is re-derived every epoch. Noise
    /// is off by default: a white-noise floor is a simulator artifact the
    /// encoder would otherwise spend its capacity on.
    pub separator: ConfusionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::PL1,
            beta: 0.2,
            margin: 1.0,
            support_size: 5,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 8,
            embed_dim: DEFAULT_EMBED_DIM,
            seed: 0,
            separator: ConfusionConfig {
                noise_snr_db: None,
                ..ConfusionConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be non-negative");
        }
        if self.support_size == 0 {
            return bad("support_size must be at least 1");
        }
        if self.embed_dim < 2 {
            return bad("embed_dim must be at least 2");
        }
        self.separator.validate()
    }

    /// Fewest utterances a speaker needs for this configuration.
    pub fn min_utterances(&self) -> usize {
        2.max(self.support_size + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub metric_loss: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingQuality {
    pub mean_intra: f64,
    pub mean_inter: f64,
    pub nearest_centroid_accuracy: f64,
}

impl EmbeddingQuality {
    pub fn separation_ratio(&self) -> f64 {
        self.mean_inter / self.mean_intra
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub scheme: Scheme,
    pub seed: u64,
    pub loss_curve: Vec<EpochStats>,
    pub initial_quality: EmbeddingQuality,
    pub final_quality: EmbeddingQuality,
    pub ge2e: Option<Ge2eParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder: ToyEncoder,
    pub ge2e: Option<Ge2eParams>,
    pub report: TrainReport,
}

/// Intra/inter-speaker distances and leave-one-out nearest-centroid
/// accuracy over labeled normalized embeddings.
pub fn embedding_quality(items: &[(usize, Embedding)]) -> Result<EmbeddingQuality> {
    if items.is_empty() {
        return Err(Error::Empty("embedding set"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (spk, _)) in items.iter().enumerate() {
        groups.entry(*spk).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::TooFewSpeakers {
            needed: 2,
            actual: groups.len(),
        });
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let d = euclidean(&items[i].1.values, &items[j].1.values);
            if items[i].0 == items[j].0 {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let dim = items[0].1.dim();
    let sums: BTreeMap<usize, Vec<f64>> = groups
        .iter()
        .map(|(spk, idx)| {
            let mut s = vec![0.0; dim];
            for &i in idx {
                for (a, b) in s.iter_mut().zip(&items[i].1.values) {
                    *a += b;
                }
            }
            (*spk, s)
        })
        .collect();
    let mut correct = 0usize;
    for (spk, e) in items {
        let mut best: Option<(f64, usize)> = None;
        for (other, sum) in &sums {
            let count = groups[other].len();
            let centroid: Vec<f64> = if other == spk && count > 1 {
                sum.iter().zip(&e.values).map(|(s, v)| (s - v) / (count - 1) as f64).collect()
            } else {
                sum.iter().map(|s| s / count as f64).collect()
            };
            let d = euclidean(&e.values, &centroid);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, *other));
            }
        }
        if best.map(|(_, s)| s) == Some(*spk) {
            correct += 1;
        }
    }
    Ok(EmbeddingQuality {
        mean_intra: if n_intra > 0 { intra / n_intra as f64 } else { 0.0 },
        mean_inter: inter / n_inter as f64,
        nearest_centroid_accuracy: correct as f64 / items.len() as f64,
    })
}

pub fn eval_embedding_quality(enc: &ToyEncoder, corpus: &LabeledCorpus) -> Result<EmbeddingQuality> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let frontend = enc.frontend()?;
    let items = corpus
        .utterances
        .iter()
        .map(|u| Ok((u.speaker, enc.encode_with(&frontend, &u.waveform)?)))
        .collect::<Result<Vec<_>>>()?;
    embedding_quality(&items)
}

/// One `(target, interferer)` pair of a batch with the utterances drawn
/// for it (indices into the corpus).
#[derive(Debug, Clone, Copy)]
struct PairDraw {
    target: usize,
    interferer: usize,
    source_target: usize,
    enroll_target: usize,
    source_interferer: usize,
    enroll_interferer: usize,
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    corpus: &'a LabeledCorpus,
    /// Per speaker row: `(speaker id, utterance indices)`.
    groups: Vec<(usize, Vec<usize>)>,
    /// Corpus utterance -> (speaker row, position within row).
    position: Vec<(usize, usize)>,
    pooled: Vec<Vec<f64>>,
    frontend: crate::embedding::Frontend,
}

impl<'a> Trainer<'a> {
    fn new(corpus: &'a LabeledCorpus, config: &'a TrainConfig, frontend_config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let groups = corpus.indices_by_speaker();
        if groups.len() < 2 {
            return Err(Error::TooFewSpeakers {
                needed: 2,
                actual: groups.len(),
            });
        }
        for (spk, idx) in &groups {
            if idx.len() < config.min_utterances() {
                return Err(Error::TooFewUtterances {
                    speaker: *spk,
                    needed: config.min_utterances(),
                    actual: idx.len(),
                });
            }
        }
        let mut position = vec![(0, 0); corpus.len()];
        for (row, (_, idx)) in groups.iter().enumerate() {
            for (pos, &u) in idx.iter().enumerate() {
                position[u] = (row, pos);
            }
        }
        let frontend = crate::embedding::Frontend::new(frontend_config)?;
        let pooled = corpus
            .utterances
            .iter()
            .map(|u| Ok(frontend.compute(&u.waveform)?.mean_over_time()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            corpus,
            groups,
            position,
            pooled,
            frontend,
        })
    }

    fn draw_batch(&self, rng: &mut impl Rng) -> Vec<PairDraw> {
        let rows = self.groups.len();
        let mut pairs: Vec<(usize, usize)> = (0..rows)
            .flat_map(|t| (0..rows).filter(move |&i| i != t).map(move |i| (t, i)))
            .collect();
        let take = self.config.batch_size.min(pairs.len());
        let (chosen, _) = pairs.partial_shuffle(rng, take);
        chosen
            .iter()
            .map(|&(t, i)| {
                let two = |row: usize, rng: &mut dyn rand::RngCore| {
                    let pick: Vec<usize> = self.groups[row].1.choose_multiple(rng, 2).cloned().collect();
                    (pick[0], pick[1])
                };
                let (source_target, enroll_target) = two(t, rng);
                let (source_interferer, enroll_interferer) = two(i, rng);
                PairDraw {
                    target: t,
                    interferer: i,
                    source_target,
                    enroll_target,
                    source_interferer,
                    enroll_interferer,
                }
            })
            .collect()
    }

    fn sample_for(&self, draw: &PairDraw, index: usize) -> Result<ExtractionSample> {
        let wave = |u: usize| &self.corpus.utterances[u].waveform;
        let n = wave(draw.source_target).len().min(wave(draw.source_interferer).len());
        let cut = |w: &Waveform| Waveform::new(w.samples[..n.min(w.len())].to_vec(), w.sample_rate);
        let source_target = cut(wave(draw.source_target));
        let source_interferer = cut(wave(draw.source_interferer));
        Ok(ExtractionSample {
            index,
            role: Role::Primary,
            mixture: mix(&source_target, &source_interferer)?,
            source_target,
            source_interferer,
            enroll_target: wave(draw.enroll_target).clone(),
            enroll_interferer: wave(draw.enroll_interferer).clone(),
            spk_target: self.groups[draw.target].0,
            spk_interferer: self.groups[draw.interferer].0,
        })
    }
}

/// Gradient sink keyed by corpus utterance or batch estimate.
#[derive(Default)]
struct Grads {
    utterances: BTreeMap<usize, Vec<f64>>,
    estimates: BTreeMap<usize, Vec<f64>>,
}

impl Grads {
    fn add(slot: &mut BTreeMap<usize, Vec<f64>>, key: usize, g: &[f64], scale: f64) {
        let entry = slot.entry(key).or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in entry.iter_mut().zip(g) {
            *a += scale * b;
        }
    }
}

#[derive(Clone, Copy)]
enum Probe {
    Utterance(usize),
    Estimate(usize),
}

pub fn train_encoder(corpus: &LabeledCorpus, config: &TrainConfig) -> Result<TrainedModel> {
    let encoder = ToyEncoder::random(
        config.embed_dim,
        FrontendConfig::default(),
        seed::derive_seed(config.seed, "train-init", &[]),
    )?;
    train_encoder_from(encoder, corpus, config)
}

/// Trains starting from a given encoder. Deterministic for a fixed seed.
pub fn train_encoder_from(
    mut encoder: ToyEncoder,
    corpus: &LabeledCorpus,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    encoder.validate()?;
    let trainer = Trainer::new(corpus, config, encoder.frontend.clone())?;
    let initial_quality = eval_embedding_quality(&encoder, corpus)?;
    let n_speakers = trainer.groups.len();
    let mut ge2e = matches!(config.scheme, Scheme::GL1 | Scheme::GL2).then(Ge2eParams::default);
    let mut head = (config.scheme == Scheme::CE).then(|| {
        ClassifierHead::random(
            n_speakers,
            config.embed_dim,
            seed::derive_seed(config.seed, "train-head", &[]),
        )
    });
    let steps_per_epoch = (corpus.len() / config.batch_size).max(1);
    let step_size = config.learning_rate * config.beta;
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = seed::rng_for(config.seed, "train-batches", &[epoch as u64]);
        let separator = ConfusionConfig {
            seed: seed::derive_seed(config.separator.seed ^ config.seed, "train-separator", &[epoch as u64]),
            ..config.separator
        };
        let (mut metric_sum, mut total_sum) = (0.0, 0.0);
        for step in 0..steps_per_epoch {
            let draws = trainer.draw_batch(&mut rng);
            let mut recon = Vec::with_capacity(draws.len());
            let mut estimates = Vec::new();
            for (n, d) in draws.iter().enumerate() {
                let sample = trainer.sample_for(d, step * config.batch_size + n)?;
                let sep = toy_separator(&sample, &separator)?;
                recon.push(-si_sdr(&sep.estimate, &sample.source_target)?);
                if config.scheme.uses_estimate() {
                    let pooled = trainer.frontend.compute(&sep.estimate)?.mean_over_time();
                    estimates.push(encoder.encode_pooled(&pooled)?);
                }
            }
            let (metric, grads, head_grads) =
                scheme_step(&trainer, &encoder, &draws, &estimates, config, ge2e, head.as_ref(), &mut rng)?;
            if !metric.value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            metric_sum += metric.value;
            total_sum += multitask_loss(&recon, metric.value, config.beta)?;

            let mut grad_p = vec![0.0; encoder.projection.len()];
            let mut traces: BTreeMap<usize, EncodeTrace> = BTreeMap::new();
            for (&u, g) in &grads.utterances {
                let trace = traces
                    .entry(u)
                    .or_insert(encoder.encode_pooled(&trainer.pooled[u])?);
                encoder.accumulate_projection_grad(trace, g, &mut grad_p);
            }
            for (&k, g) in &grads.estimates {
                encoder.accumulate_projection_grad(&estimates[k], g, &mut grad_p);
            }
            for (p, g) in encoder.projection.iter_mut().zip(&grad_p) {
                *p -= step_size * g;
            }
            if let Some(params) = ge2e.as_mut() {
                params.w -= step_size * metric.grad_w;
                params.b -= step_size * metric.grad_b;
                params.clamp();
            }
            if let (Some(h), Some((gw, gb))) = (head.as_mut(), head_grads) {
                for (w, g) in h.weights.iter_mut().zip(&gw) {
                    *w -= step_size * g;
                }
                for (b, g) in h.bias.iter_mut().zip(&gb) {
                    *b -= step_size * g;
                }
            }
            if encoder.projection.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
        }
        loss_curve.push(EpochStats {
            epoch,
            metric_loss: metric_sum / steps_per_epoch as f64,
            total_loss: total_sum / steps_per_epoch as f64,
        });
    }

    let final_quality = eval_embedding_quality(&encoder, corpus)?;
    let report = TrainReport {
        scheme: config.scheme,
        seed: config.seed,
        loss_curve,
        initial_quality,
        final_quality,
        ge2e,
    };
    Ok(TrainedModel {
        encoder,
        ge2e,
        report,
    })
}

struct MetricValue {
    value: f64,
    grad_w: f64,
    grad_b: f64,
}

type HeadGrads = Option<(Vec<f64>, Vec<f64>)>;

#[allow(clippy::too_many_arguments)]
fn scheme_step(
    trainer: &Trainer<'_>,
    encoder: &ToyEncoder,
    draws: &[PairDraw],
    estimates: &[EncodeTrace],
    config: &TrainConfig,
    ge2e: Option<Ge2eParams>,
    head: Option<&ClassifierHead>,
    rng: &mut impl Rng,
) -> Result<(MetricValue, Grads, HeadGrads)> {
    let mut cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut embed = |u: usize| -> Result<Vec<f64>> {
        if let Some(e) = cache.get(&u) {
            return Ok(e.clone());
        }
        let e = encoder.encode_pooled(&trainer.pooled[u])?.embedding.values;
        cache.insert(u, e.clone());
        Ok(e)
    };
    let probe = |n: usize, d: &PairDraw| {
        if config.scheme.uses_estimate() {
            Probe::Estimate(n)
        } else {
            Probe::Utterance(d.enroll_target)
        }
    };
    let mut grads = Grads::default();
    let mut head_grads = None;
    let mut out = MetricValue {
        value: 0.0,
        grad_w: 0.0,
        grad_b: 0.0,
    };
    let nb = draws.len() as f64;
    let probe_vec = |p: Probe, embed: &mut dyn FnMut(usize) -> Result<Vec<f64>>| -> Result<Vec<f64>> {
        match p {
            Probe::Utterance(u) => embed(u),
            Probe::Estimate(k) => Ok(estimates[k].embedding.values.clone()),
        }
    };
    let add_probe = |grads: &mut Grads, p: Probe, g: &[f64], scale: f64| match p {
        Probe::Utterance(u) => Grads::add(&mut grads.utterances, u, g, scale),
        Probe::Estimate(k) => Grads::add(&mut grads.estimates, k, g, scale),
    };

    match config.scheme {
        Scheme::None => {}
        Scheme::TL1 | Scheme::TL2 => {
            for (n, d) in draws.iter().enumerate() {
                let positive = probe(n, d);
                let t = triplet_raw(
                    &embed(d.source_target)?,
                    &probe_vec(positive, &mut embed)?,
                    &embed(d.enroll_interferer)?,
                    config.margin,
                );
                out.value += t.value / nb;
                Grads::add(&mut grads.utterances, d.source_target, &t.grad_anchor, 1.0 / nb);
                add_probe(&mut grads, positive, &t.grad_positive, 1.0 / nb);
                Grads::add(&mut grads.utterances, d.enroll_interferer, &t.grad_negative, 1.0 / nb);
            }
        }
        Scheme::PL1 | Scheme::PL2 => {
            let mut used: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for d in draws {
                used.entry(d.target).or_default().extend([d.source_target, d.enroll_target]);
                used.entry(d.interferer).or_default().extend([d.source_interferer, d.enroll_interferer]);
            }
            let mut supports = Vec::with_capacity(trainer.groups.len());
            for (row, (_, idx)) in trainer.groups.iter().enumerate() {
                let busy = used.get(&row).cloned().unwrap_or_default();
                let pool: Vec<usize> = idx.iter().copied().filter(|u| !busy.contains(u)).collect();
                let pool = if pool.is_empty() { idx.clone() } else { pool };
                let take = config.support_size.min(pool.len());
                supports.push(pool.choose_multiple(rng, take).copied().collect::<Vec<_>>());
            }
            let mut prototypes = Vec::with_capacity(supports.len());
            for s in &supports {
                let mut c = vec![0.0; config.embed_dim];
                for &u in s {
                    for (a, b) in c.iter_mut().zip(embed(u)?) {
                        *a += b;
                    }
                }
                c.iter_mut().for_each(|a| *a /= s.len() as f64);
                prototypes.push(c);
            }
            let probes: Vec<Probe> = draws.iter().enumerate().map(|(n, d)| probe(n, d)).collect();
            let queries = probes
                .iter()
                .map(|&p| probe_vec(p, &mut embed))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = draws.iter().map(|d| d.target).collect();
            let pl = prototypical_raw(&queries, &labels, &prototypes);
            out.value = pl.value;
            for (p, g) in probes.iter().zip(&pl.grad_queries) {
                add_probe(&mut grads, *p, g, 1.0);
            }
            for (s, g) in supports.iter().zip(&pl.grad_prototypes) {
                for &u in s {
                    Grads::add(&mut grads.utterances, u, g, 1.0 / s.len() as f64);
                }
            }
        }
        Scheme::GL1 | Scheme::GL2 => {
            let params = ge2e.unwrap_or_default();
            let members = trainer
                .groups
                .iter()
                .map(|(_, idx)| idx.iter().map(|&u| embed(u)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let probes: Vec<Probe> = draws.iter().enumerate().map(|(n, d)| probe(n, d)).collect();
            let batch = probes
                .iter()
                .map(|&p| probe_vec(p, &mut embed))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<(usize, Option<usize>)> = draws
                .iter()
                .zip(&probes)
                .map(|(d, p)| match p {
                    Probe::Utterance(u) => (d.target, Some(trainer.position[*u].1)),
                    Probe::Estimate(_) => (d.target, None),
                })
                .collect();
            let gl = ge2e_raw(&batch, &labels, &members, params);
            out.value = gl.value;
            out.grad_w = gl.grad_w;
            out.grad_b = gl.grad_b;
            for (p, g) in probes.iter().zip(&gl.grad_batch) {
                add_probe(&mut grads, *p, g, 1.0);
            }
            for (row, list) in gl.grad_bank.iter().enumerate() {
                for (pos, g) in list.iter().enumerate() {
                    Grads::add(&mut grads.utterances, trainer.groups[row].1[pos], g, 1.0);
                }
            }
        }
        Scheme::CE => {
            let head = head.ok_or_else(|| Error::InvalidConfig("CE scheme needs a classifier head".into()))?;
            let mut gw = vec![0.0; head.weights.len()];
            let mut gb = vec![0.0; head.bias.len()];
            for d in draws {
                let x = embed(d.enroll_target)?;
                let ce = ce_speaker_loss(&head.logits(&x), d.target)?;
                out.value += ce.value / nb;
                let scaled: Vec<f64> = ce.grad_logits.iter().map(|g| g / nb).collect();
                let gx = head.backward(&x, &scaled, &mut gw, &mut gb);
                Grads::add(&mut grads.utterances, d.enroll_target, &gx, 1.0);
            }
            head_grads = Some((gw, gb));
        }
    }
    Ok((out, grads, head_grads))
}
