//! The toy speaker encoder: mean-pooled log-mel features, a linear
//! projection, and L2 normalization.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frontend::{Frontend, FrontendConfig};
use super::Embedding;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_EMBED_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEncoder {
    pub embed_dim: usize,
    pub n_mels: usize,
    /// Row-major `embed_dim x n_mels`.
    pub projection: Vec<f64>,
    pub frontend: FrontendConfig,
    pub seed: u64,
}

/// Pre-normalization state kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub pooled: Vec<f64>,
    pub embedding: Embedding,
    pub raw_norm: f64,
}

impl ToyEncoder {
    /// Projection entries drawn i.i.d. uniform in `[-1/sqrt(F), 1/sqrt(F)]`.
    pub fn random(embed_dim: usize, frontend: FrontendConfig, seed: u64) -> Result<Self> {
        frontend.validate()?;
        if embed_dim < 2 {
            return Err(Error::InvalidConfig("embed_dim must be at least 2".into()));
        }
        let n_mels = frontend.n_mels;
        let bound = 1.0 / (n_mels as f64).sqrt();
        let mut rng = seed::rng_for(seed, "encoder-init", &[]);
        let projection = (0..embed_dim * n_mels)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Ok(Self {
            embed_dim,
            n_mels,
            projection,
            frontend,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        if self.embed_dim < 2 {
            return Err(Error::InvalidConfig("embed_dim must be at least 2".into()));
        }
        if self.n_mels != self.frontend.n_mels {
            return Err(Error::DimensionMismatch {
                expected: self.frontend.n_mels,
                actual: self.n_mels,
            });
        }
        if self.projection.len() != self.embed_dim * self.n_mels {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim * self.n_mels,
                actual: self.projection.len(),
            });
        }
        if self.projection.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("projection has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn frontend(&self) -> Result<Frontend> {
        Frontend::new(self.frontend.clone())
    }

    pub fn pooled_features(&self, frontend: &Frontend, w: &Waveform) -> Result<Vec<f64>> {
        Ok(frontend.compute(w)?.mean_over_time())
    }

    fn project(&self, pooled: &[f64]) -> Vec<f64> {
        self.projection
            .chunks_exact(self.n_mels)
            .map(|row| row.iter().zip(pooled).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn encode_pooled(&self, pooled: &[f64]) -> Result<EncodeTrace> {
        if pooled.len() != self.n_mels {
            return Err(Error::DimensionMismatch {
                expected: self.n_mels,
                actual: pooled.len(),
            });
        }
        let raw = self.project(pooled);
        let raw_norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let embedding = Embedding::normalize(raw)?;
        Ok(EncodeTrace {
            pooled: pooled.to_vec(),
            embedding,
            raw_norm,
        })
    }

    pub fn encode_with(&self, frontend: &Frontend, w: &Waveform) -> Result<Embedding> {
        let pooled = self.pooled_features(frontend, w)?;
        Ok(self.encode_pooled(&pooled)?.embedding)
    }

    /// Adds `dL/dprojection` for one encoded utterance to `grad`, given
    /// `dL/dembedding`.
    pub fn accumulate_projection_grad(&self, trace: &EncodeTrace, grad_emb: &[f64], grad: &mut [f64]) {
        let e = &trace.embedding.values;
        let along: f64 = e.iter().zip(grad_emb).map(|(a, b)| a * b).sum();
        for (d, row) in grad.chunks_exact_mut(self.n_mels).enumerate() {
            let g_raw = (grad_emb[d] - e[d] * along) / trace.raw_norm;
            if g_raw == 0.0 {
                continue;
            }
            for (slot, x) in row.iter_mut().zip(&trace.pooled) {
                *slot += g_raw * x;
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let enc: ToyEncoder = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        enc.validate()?;
        Ok(enc)
    }
}

pub fn encode(enc: &ToyEncoder, w: &Waveform) -> Result<Embedding> {
    enc.encode_with(&enc.frontend()?, w)
}
