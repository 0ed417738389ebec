//! Deterministic desk-scale laboratory for doubly adversarial suppression
//! training: a reverse-mode autodiff core, small dense networks with
//! gradient-reversal layers, a two-step alternating trainer, a synthetic
//! factor-structured data generator, spoof-detection metrics, and linear
//! probes for measuring factor leakage in learned features.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod probe;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
