//! Architecture adaptation for growing data.
//!
//! Measures the distribution shift between consecutive data snapshots with
//! the Gaussian 2-Wasserstein distance, gates adaptation on the accuracy drop
//! of the current architecture, and trains a policy-gradient architecture
//! adjuster whose reward trades accuracy gain against MAdds growth scaled by
//! the inverse data shift.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussian;
pub mod rng;
pub mod datagen;
pub mod search_space;
pub mod evaluator;
pub mod gate;
pub mod controller;
pub mod orchestrator;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
