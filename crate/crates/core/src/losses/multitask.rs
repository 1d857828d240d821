use serde::{Deserialize, Serialize};

use super::Scheme;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskConfig {
    pub beta: f64,
    pub batch_size: usize,
    pub scheme: Scheme,
}

impl Default for MultiTaskConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            batch_size: 8,
            scheme: Scheme::PL1,
        }
    }
}

/// `beta * metric_loss + mean(recon_losses)`.
pub fn multitask_loss(recon_losses: &[f64], metric_loss: f64, beta: f64) -> Result<f64> {
    if recon_losses.is_empty() {
        return Err(Error::Empty("reconstruction losses"));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidConfig(format!("beta must be >= 0, got {beta}")));
    }
    let mean = recon_losses.iter().sum::<f64>() / recon_losses.len() as f64;
    Ok(beta * metric_loss + mean)
}
