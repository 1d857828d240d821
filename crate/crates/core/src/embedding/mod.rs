//! Speaker embeddings: the log-mel front-end, the toy encoder and the two
//! distance measures shared by the losses and the post-filter.

mod encoder;
mod frontend;

pub use encoder::{encode, EncodeTrace, ToyEncoder, DEFAULT_EMBED_DIM};
pub use frontend::{
    hz_to_mel, log_mel_features, mel_filterbank, mel_to_hz, FeatureMatrix, Frontend, FrontendConfig,
};

use crate::error::{Error, Result};

/// Tolerance on `|‖v‖ - 1|` for an embedding to count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Embedding {
    /// Wraps a vector as-is, flagging it normalized when its norm is 1.
    pub fn new(values: Vec<f64>) -> Self {
        let normalized = (norm(&values) - 1.0).abs() <= NORM_TOLERANCE;
        Self { values, normalized }
    }

    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        let n = norm(&values);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / n).collect(),
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    fn require_normalized(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Unnormalized { norm: n });
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (norm(a) * norm(b))
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// Euclidean distance between two L2-normalized embeddings, in `[0, 2]`.
pub fn l2_distance_normed(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    a.require_normalized()?;
    b.require_normalized()?;
    Ok(euclidean(&a.values, &b.values).min(2.0))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    if norm(&a.values) == 0.0 || norm(&b.values) == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(cosine(&a.values, &b.values).clamp(-1.0, 1.0))
}
