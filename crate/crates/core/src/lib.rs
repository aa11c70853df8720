//! Metric learning with label-interpolated mixup.
//!
//! The crate covers a generic pair/proxy loss calculus, mixing of inputs,
//! features or embeddings with interpolated two-class labels, a small tanh
//! encoder trained by SGD, and embedding-space diagnostics (positivity,
//! alignment, uniformity, utilization, Recall@K).

// `!(x > 0.0)` guards are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod loss;
pub mod mixup;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
