//! Workbench for single-positive multi-label learning with the generalized
//! robust loss: soft pseudo-labels, Gaussian instance weights, GCE-style
//! surrogates, baselines re-expressed in the same framework, a small trainer
//! and the evaluation used to study all of them.

pub mod adapters;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gr_loss;
pub mod gradcheck;
pub mod numerics;
pub mod trainer;

pub use error::{Result, SpmlError};
