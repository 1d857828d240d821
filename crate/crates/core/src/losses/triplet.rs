use serde::{Deserialize, Serialize};

use super::check_dim;
use crate::embedding::{euclidean, Embedding, NORM_TOLERANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Triplet {
    pub anchor: Embedding,
    pub positive: Embedding,
    pub negative: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// Hinge `max(0, d(u, v) - d(u, w) + margin)` on normalized embeddings.
pub fn triplet_loss(t: &Triplet, margin: f64) -> Result<TripletOutput> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidConfig(format!("margin must be >= 0, got {margin}")));
    }
    for e in [&t.anchor, &t.positive, &t.negative] {
        let n = e.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Unnormalized { norm: n });
        }
    }
    let d = t.anchor.dim();
    check_dim(d, &t.positive.values)?;
    check_dim(d, &t.negative.values)?;
    Ok(triplet_raw(
        &t.anchor.values,
        &t.positive.values,
        &t.negative.values,
        margin,
    ))
}

/// Unchecked form of [`triplet_loss`]. At the hinge point the zero branch
/// is taken; a zero distance contributes a zero subgradient.
pub fn triplet_raw(u: &[f64], v: &[f64], w: &[f64], margin: f64) -> TripletOutput {
    let dim = u.len();
    let d_pos = euclidean(u, v);
    let d_neg = euclidean(u, w);
    let value = d_pos - d_neg + margin;
    if value <= 0.0 {
        return TripletOutput {
            value: 0.0,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        };
    }
    let unit = |a: &[f64], b: &[f64], d: f64| -> Vec<f64> {
        if d == 0.0 {
            vec![0.0; dim]
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
        }
    };
    let to_pos = unit(u, v, d_pos);
    let to_neg = unit(u, w, d_neg);
    TripletOutput {
        value,
        grad_anchor: to_pos.iter().zip(&to_neg).map(|(p, n)| p - n).collect(),
        grad_positive: to_pos.iter().map(|p| -p).collect(),
        grad_negative: to_neg,
    }
}
