//! Training objectives for the speaker encoder.
//!
//! Every loss returns its value together with exact gradients with respect
//! to the embeddings it consumes (and its own parameters, where it has
//! any). The `*_raw` entry points work on plain slices so they can be
//! probed by [`finite_difference_check`] off the unit sphere.

mod ce;
mod ge2e;
mod gradcheck;
mod multitask;
mod prototypical;
mod triplet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ce::{ce_speaker_loss, CeOutput, ClassifierHead};
pub use ge2e::{
    ge2e_centroid, ge2e_loss, ge2e_raw, Ge2eOutput, Ge2eParams, Ge2eProbe, UtteranceBank,
};
pub use gradcheck::finite_difference_check;
pub use multitask::{multitask_loss, MultiTaskConfig};
pub use prototypical::{
    prototype, prototypical_loss, prototypical_raw, LabeledEmbedding, Prototype, PrototypicalOutput,
    SupportQuerySplit,
};
pub use triplet::{triplet_loss, triplet_raw, Triplet, TripletConfig, TripletOutput};

/// Which auxiliary objective drives the encoder.
///
/// Suffix 1 probes with the target enrollment, suffix 2 with the
/// extraction estimate of the target. `Ce` is the speaker-classification
/// baseline and `None` trains on reconstruction alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    TL1,
    TL2,
    PL1,
    PL2,
    GL1,
    GL2,
    CE,
    #[serde(rename = "none")]
    None,
}

impl Scheme {
    pub const METRIC: [Scheme; 6] = [
        Scheme::TL1,
        Scheme::TL2,
        Scheme::PL1,
        Scheme::PL2,
        Scheme::GL1,
        Scheme::GL2,
    ];

    /// True when the probe is the separator's estimate rather than the
    /// enrollment.
    pub fn uses_estimate(self) -> bool {
        matches!(self, Scheme::TL2 | Scheme::PL2 | Scheme::GL2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::TL1 => "TL1",
            Scheme::TL2 => "TL2",
            Scheme::PL1 => "PL1",
            Scheme::PL2 => "PL2",
            Scheme::GL1 => "GL1",
            Scheme::GL2 => "GL2",
            Scheme::CE => "CE",
            Scheme::None => "none",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            Scheme::TL1,
            Scheme::TL2,
            Scheme::PL1,
            Scheme::PL2,
            Scheme::GL1,
            Scheme::GL2,
            Scheme::CE,
            Scheme::None,
        ];
        all.into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme '{s}' (expected TL1, TL2, PL1, PL2, GL1, GL2, CE or none)"))
    }
}

/// Log-softmax in max-shifted form.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - lse).collect()
}

pub(crate) fn check_dim(expected: usize, v: &[f64]) -> crate::Result<()> {
    if v.len() != expected {
        return Err(crate::Error::DimensionMismatch {
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::METRIC.into_iter().chain([Scheme::CE, Scheme::None]) {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("PL3".parse::<Scheme>().is_err());
    }

    #[test]
    fn log_softmax_is_stable() {
        let lp = log_softmax(&[1000.0, 1000.0]);
        assert!((lp[0] + std::f64::consts::LN_2).abs() < 1e-12);
        let p: f64 = log_softmax(&[0.3, -2.0, 5.0]).iter().map(|x| x.exp()).sum();
        assert!((p - 1.0).abs() < 1e-12);
    }
}
