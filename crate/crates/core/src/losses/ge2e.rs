use serde::{Deserialize, Serialize};

use super::{check_dim, log_softmax};
use crate::embedding::{cosine, norm};
use crate::error::{Error, Result};

/// Per-speaker embedding lists `C_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceBank {
    pub speakers: Vec<usize>,
    pub members: Vec<Vec<Vec<f64>>>,
}

impl UtteranceBank {
    pub fn new(speakers: Vec<usize>, members: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if speakers.len() != members.len() {
            return Err(Error::DimensionMismatch {
                expected: speakers.len(),
                actual: members.len(),
            });
        }
        for (spk, m) in speakers.iter().zip(&members) {
            if m.is_empty() {
                return Err(Error::TooFewUtterances {
                    speaker: *spk,
                    needed: 1,
                    actual: 0,
                });
            }
        }
        Ok(Self { speakers, members })
    }

    pub fn position(&self, speaker: usize) -> Result<usize> {
        self.speakers
            .iter()
            .position(|&s| s == speaker)
            .ok_or(Error::UnknownLabel(speaker))
    }

    fn dim(&self) -> usize {
        self.members[0][0].len()
    }
}

/// A batch element. `member` is the element's index inside its own
/// speaker's bank list when the utterance is also in the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Ge2eProbe {
    pub speaker: usize,
    pub embedding: Vec<f64>,
    pub member: Option<usize>,
}

/// Softmax scale `w` and bias `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ge2eParams {
    pub w: f64,
    pub b: f64,
}

impl Default for Ge2eParams {
    fn default() -> Self {
        Self { w: 10.0, b: -5.0 }
    }
}

impl Ge2eParams {
    pub const MIN_W: f64 = 1e-3;

    pub fn clamp(&mut self) {
        self.w = self.w.max(Self::MIN_W);
    }
}

fn mean_excluding(list: &[Vec<f64>], skip: Option<usize>) -> Vec<f64> {
    let dim = list[0].len();
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for (j, e) in list.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        for (s, v) in sum.iter_mut().zip(e) {
            *s += v;
        }
        count += 1;
    }
    sum.into_iter().map(|s| s / count as f64).collect()
}

/// Centroid of speaker `speaker`. With `exclude = Some(j)` the bank's
/// `j`-th utterance (the probe itself) is left out of the mean.
pub fn ge2e_centroid(bank: &UtteranceBank, speaker: usize, exclude: Option<usize>) -> Result<Vec<f64>> {
    let k = bank.position(speaker)?;
    let list = &bank.members[k];
    match exclude {
        Some(j) if j >= list.len() => Err(Error::DimensionMismatch {
            expected: list.len(),
            actual: j,
        }),
        Some(_) if list.len() < 2 => Err(Error::SingletonBank(speaker)),
        _ => Ok(mean_excluding(list, exclude)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ge2eOutput {
    pub value: f64,
    /// Per batch element, a distribution over bank speakers (bank order).
    pub probabilities: Vec<Vec<f64>>,
    pub grad_batch: Vec<Vec<f64>>,
    /// Same shape as `bank.members`.
    pub grad_bank: Vec<Vec<Vec<f64>>>,
    pub grad_w: f64,
    pub grad_b: f64,
}

/// Mean negative log-likelihood of each batch element under a softmax
/// over `w * cos(x, c_i(x)) + b`.
pub fn ge2e_loss(batch: &[Ge2eProbe], bank: &UtteranceBank, params: Ge2eParams) -> Result<Ge2eOutput> {
    if bank.speakers.len() < 2 {
        return Err(Error::TooFewSpeakers {
            needed: 2,
            actual: bank.speakers.len(),
        });
    }
    if batch.is_empty() {
        return Err(Error::Empty("GE2E batch"));
    }
    let dim = bank.dim();
    for list in &bank.members {
        for e in list {
            check_dim(dim, e)?;
            if norm(e) == 0.0 {
                return Err(Error::ZeroVector);
            }
        }
    }
    let mut labels = Vec::with_capacity(batch.len());
    for probe in batch {
        check_dim(dim, &probe.embedding)?;
        if norm(&probe.embedding) == 0.0 {
            return Err(Error::ZeroVector);
        }
        let k = bank.position(probe.speaker)?;
        // Validates exclude-self preconditions.
        ge2e_centroid(bank, probe.speaker, probe.member)?;
        labels.push((k, probe.member));
    }
    let xs: Vec<Vec<f64>> = batch.iter().map(|p| p.embedding.clone()).collect();
    let out = ge2e_raw(&xs, &labels, &bank.members, params);
    if out.probabilities.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::ZeroVector);
    }
    Ok(out)
}

/// Unchecked form. `labels[n] = (bank row, optional member index)`.
///
/// `b` shifts every logit equally and cancels from the softmax, so the
/// shift is taken on `w * cos` alone and `grad_b` is identically zero.
pub fn ge2e_raw(
    batch: &[Vec<f64>],
    labels: &[(usize, Option<usize>)],
    members: &[Vec<Vec<f64>>],
    params: Ge2eParams,
) -> Ge2eOutput {
    let dim = members[0][0].len();
    let n_b = batch.len() as f64;
    let plain: Vec<Vec<f64>> = members.iter().map(|l| mean_excluding(l, None)).collect();
    let mut value = 0.0;
    let mut grad_w = 0.0;
    let mut probabilities = Vec::with_capacity(batch.len());
    let mut grad_batch = Vec::with_capacity(batch.len());
    let mut grad_bank: Vec<Vec<Vec<f64>>> = members
        .iter()
        .map(|l| vec![vec![0.0; dim]; l.len()])
        .collect();

    for (x, &(label, member)) in batch.iter().zip(labels) {
        let own = member.map(|j| mean_excluding(&members[label], Some(j)));
        let centroid = |i: usize| -> &Vec<f64> {
            match (&own, i == label) {
                (Some(c), true) => c,
                _ => &plain[i],
            }
        };
        let cosines: Vec<f64> = (0..members.len()).map(|i| cosine(x, centroid(i))).collect();
        let scaled: Vec<f64> = cosines.iter().map(|c| params.w * c).collect();
        let log_p = log_softmax(&scaled);
        value -= log_p[label] / n_b;
        let probs: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();

        let x_norm = norm(x);
        let mut gx = vec![0.0; dim];
        for i in 0..members.len() {
            let dl = (probs[i] - if i == label { 1.0 } else { 0.0 }) / n_b;
            grad_w += dl * cosines[i];
            let dcos = dl * params.w;
            if dcos == 0.0 {
                continue;
            }
            let c = centroid(i);
            let c_norm = norm(c);
            let cos = cosines[i];
            let mut gc = vec![0.0; dim];
            for k in 0..dim {
                gx[k] += dcos * (c[k] / (x_norm * c_norm) - cos * x[k] / (x_norm * x_norm));
                gc[k] = dcos * (x[k] / (x_norm * c_norm) - cos * c[k] / (c_norm * c_norm));
            }
            let skip = if i == label { member } else { None };
            let count = members[i].len() - usize::from(skip.is_some());
            for (j, slot) in grad_bank[i].iter_mut().enumerate() {
                if Some(j) == skip {
                    continue;
                }
                for k in 0..dim {
                    slot[k] += gc[k] / count as f64;
                }
            }
        }
        grad_batch.push(gx);
        probabilities.push(probs);
    }
    Ge2eOutput {
        value,
        probabilities,
        grad_batch,
        grad_bank,
        grad_w,
        grad_b: 0.0,
    }
}
