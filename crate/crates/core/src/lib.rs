//! Fairness-aware model selection over sampled sets of nearly-optimal
//! logistic regression models.
//!
//! The flow: fit the performance-optimal model, enumerate which sensitive
//! features to drop, rejection-sample nearly-optimal coefficient vectors for
//! every eligible exclusion case, rank the resulting cloud by the Fairness
//! Ranking Index on a validation split, then compare the selected model with
//! the baseline and common mitigation methods.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN

pub mod data;
pub mod error;
pub mod evaluation;
pub mod fairness;
pub mod glm;
pub mod metrics;
pub mod mitigation;
pub mod par;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod shap;

pub use error::{Error, Result};
