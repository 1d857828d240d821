use rand::Rng;

use super::log_softmax;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CeOutput {
    pub value: f64,
    pub probabilities: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

/// Softmax cross-entropy of one utterance's speaker logits.
pub fn ce_speaker_loss(logits: &[f64], label: usize) -> Result<CeOutput> {
    if logits.len() < 2 {
        return Err(Error::TooFewSpeakers {
            needed: 2,
            actual: logits.len(),
        });
    }
    if label >= logits.len() {
        return Err(Error::UnknownLabel(label));
    }
    let log_p = log_softmax(logits);
    let probabilities: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let grad_logits = probabilities
        .iter()
        .enumerate()
        .map(|(i, p)| p - if i == label { 1.0 } else { 0.0 })
        .collect();
    Ok(CeOutput {
        value: -log_p[label],
        probabilities,
        grad_logits,
    })
}

/// Linear speaker-classification head used only by the CE baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn random(n_classes: usize, dim: usize, seed: u64) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut rng = seed::rng_for(seed, "ce-head", &[]);
        Self {
            n_classes,
            dim,
            weights: (0..n_classes * dim).map(|_| rng.gen_range(-bound..=bound)).collect(),
            bias: vec![0.0; n_classes],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates head gradients and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_logits: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.dim];
        for (c, &g) in grad_logits.iter().enumerate() {
            grad_b[c] += g;
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            let grow = &mut grad_w[c * self.dim..(c + 1) * self.dim];
            for k in 0..self.dim {
                grow[k] += g * x[k];
                gx[k] += g * row[k];
            }
        }
        gx
    }
}
