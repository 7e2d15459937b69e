//! Derivative-free optimizers shared by fine-tuning and ensemble weighting.

mod bayes;
mod nelder_mead;

pub use bayes::{bayes_opt_maximize, grid_maximize, BOConfig, BOResult};
pub use nelder_mead::{nelder_mead, NMConfig, NMResult};
