//! Calibration measurement and uncertainty-aware re-ranking for pointwise
//! conversation response rankers.
//!
//! The crate covers the whole desk-scale pipeline: a small trainable scorer,
//! stochastic inference through seed ensembles and test-time dropout,
//! calibration error, mean/variance/covariance risk-aware re-ranking,
//! negative-sampling strategies, unanswerable-context (NOTA) prediction and
//! the evaluation harness tying them together.

pub mod bm25;
pub mod calibration;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod forest;
pub mod negatives;
pub mod nota;
pub mod risk;
pub mod scorer;
pub mod seed;
pub mod stochastic;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
