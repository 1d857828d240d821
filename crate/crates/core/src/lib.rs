//! Metric-learning losses and embedding-based post-filtering for the
//! target confusion problem in two-speaker target speaker extraction.

// `!(x >= lo)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod evaluation;
mod error;
pub mod losses;
pub mod postfilter;
pub mod seed;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
