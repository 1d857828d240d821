use super::{check_dim, log_softmax};
use crate::embedding::{euclidean, Embedding, NORM_TOLERANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub speaker: usize,
    pub embedding: Embedding,
}

/// Mean of a speaker's support embeddings. Not re-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub speaker: usize,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SupportQuerySplit {
    /// `(speaker, support embeddings)` per speaker.
    pub support: Vec<(usize, Vec<Embedding>)>,
    pub queries: Vec<LabeledEmbedding>,
    pub support_size: usize,
}

impl SupportQuerySplit {
    pub fn validate(&self) -> Result<()> {
        if self.support_size == 0 {
            return Err(Error::InvalidConfig("support size must be positive".into()));
        }
        if let Some((spk, _)) = self.support.iter().find(|(_, s)| s.is_empty()) {
            return Err(Error::TooFewUtterances {
                speaker: *spk,
                needed: 1,
                actual: 0,
            });
        }
        for q in &self.queries {
            if !self.support.iter().any(|(spk, _)| *spk == q.speaker) {
                return Err(Error::UnknownLabel(q.speaker));
            }
        }
        Ok(())
    }

    pub fn prototypes(&self) -> Result<Vec<Prototype>> {
        self.validate()?;
        self.support
            .iter()
            .map(|(spk, s)| {
                let mut p = prototype(s)?;
                p.speaker = *spk;
                Ok(p)
            })
            .collect()
    }

    pub fn loss(&self) -> Result<PrototypicalOutput> {
        prototypical_loss(&self.queries, &self.prototypes()?)
    }
}

/// Elementwise mean of the support set. The returned speaker id is 0;
/// callers that track identities set it.
pub fn prototype(support: &[Embedding]) -> Result<Prototype> {
    let first = support.first().ok_or(Error::Empty("support set"))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for e in support {
        check_dim(dim, &e.values)?;
        for (s, v) in sum.iter_mut().zip(&e.values) {
            *s += v;
        }
    }
    let n = support.len() as f64;
    Ok(Prototype {
        speaker: 0,
        centroid: sum.into_iter().map(|s| s / n).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypicalOutput {
    pub value: f64,
    /// Per query, a distribution over the prototypes (in input order).
    pub probabilities: Vec<Vec<f64>>,
    pub grad_queries: Vec<Vec<f64>>,
    pub grad_prototypes: Vec<Vec<f64>>,
}

/// Mean negative log-likelihood of each query under a softmax over
/// negative distances to every prototype.
pub fn prototypical_loss(
    queries: &[LabeledEmbedding],
    prototypes: &[Prototype],
) -> Result<PrototypicalOutput> {
    if prototypes.len() < 2 {
        return Err(Error::TooFewSpeakers {
            needed: 2,
            actual: prototypes.len(),
        });
    }
    if queries.is_empty() {
        return Err(Error::Empty("query set"));
    }
    let dim = prototypes[0].centroid.len();
    let mut labels = Vec::with_capacity(queries.len());
    for q in queries {
        let n = q.embedding.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Unnormalized { norm: n });
        }
        check_dim(dim, &q.embedding.values)?;
        let idx = prototypes
            .iter()
            .position(|p| p.speaker == q.speaker)
            .ok_or(Error::UnknownLabel(q.speaker))?;
        labels.push(idx);
    }
    for p in prototypes {
        check_dim(dim, &p.centroid)?;
    }
    let qs: Vec<Vec<f64>> = queries.iter().map(|q| q.embedding.values.clone()).collect();
    let ps: Vec<Vec<f64>> = prototypes.iter().map(|p| p.centroid.clone()).collect();
    Ok(prototypical_raw(&qs, &labels, &ps))
}

/// Unchecked form; `labels[n]` indexes into `prototypes`.
pub fn prototypical_raw(queries: &[Vec<f64>], labels: &[usize], prototypes: &[Vec<f64>]) -> PrototypicalOutput {
    let dim = prototypes[0].len();
    let n_q = queries.len() as f64;
    let mut value = 0.0;
    let mut probabilities = Vec::with_capacity(queries.len());
    let mut grad_queries = Vec::with_capacity(queries.len());
    let mut grad_prototypes = vec![vec![0.0; dim]; prototypes.len()];
    for (q, &label) in queries.iter().zip(labels) {
        let dists: Vec<f64> = prototypes.iter().map(|p| euclidean(q, p)).collect();
        let logits: Vec<f64> = dists.iter().map(|d| -d).collect();
        let log_p = log_softmax(&logits);
        value -= log_p[label] / n_q;
        let probs: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let mut gq = vec![0.0; dim];
        for (i, p) in prototypes.iter().enumerate() {
            // d loss / d logit_i, scaled by the batch mean
            let dl = (probs[i] - if i == label { 1.0 } else { 0.0 }) / n_q;
            if dists[i] == 0.0 || dl == 0.0 {
                continue;
            }
            // logit_i = -|q - p_i|
            for k in 0..dim {
                let unit = (q[k] - p[k]) / dists[i];
                gq[k] -= dl * unit;
                grad_prototypes[i][k] += dl * unit;
            }
        }
        grad_queries.push(gq);
        probabilities.push(probs);
    }
    PrototypicalOutput {
        value,
        probabilities,
        grad_queries,
        grad_prototypes,
    }
}
