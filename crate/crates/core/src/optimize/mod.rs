//! Outer maximum-likelihood estimation.

pub mod bfgs;
pub mod mle;

pub use bfgs::{minimize, BfgsOptions, BfgsResult};
pub use mle::{aic, default_init, fit_mle, observed_information, standard_errors, MleFit};
