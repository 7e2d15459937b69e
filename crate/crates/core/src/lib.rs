//! Survival prognostication toolkit.
//!
//! The crate bundles a fine-tunable parametric competing-cause model
//! ([`baseline`]), two tree-ensemble learners ([`forest`], [`boost`]), a convex
//! [`ensemble`] with fallback for invalid baseline predictions, a
//! censoring-aware evaluation harness ([`metrics`]) and the experiment
//! orchestration in [`pipeline`].

pub mod baseline;
pub mod boost;
pub mod cohort;
pub mod ensemble;
pub mod error;
pub mod explain;
pub mod features;
pub mod forest;
pub mod metrics;
pub mod optimize;
pub mod pipeline;
pub mod rebalance;
pub mod rng;
pub mod stats;
pub mod tree;

pub use baseline::{BaselineParamVector, SurvivalPrediction};
pub use cohort::{Cohort, PatientRecord, SplitTriple};
pub use error::{Error, Result};
pub use metrics::Objective;

/// Default prediction horizon in years.
pub const DEFAULT_HORIZON: f64 = 5.0;
