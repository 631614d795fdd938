//! Synthetic laboratory for CLIP-style contrastive learning with linear
//! score functions: a latent-variable generative model for paired data,
//! contrastive and square losses with regularizers, gradient-descent
//! training, zero-shot evaluation and margin diagnostics, and a runner for
//! seeded experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod linalg;
pub mod loss;
pub mod par;
pub mod rng;
pub mod score;
pub mod trainer;

pub use error::{Error, Result};
