//! Inference engine for Poisson-observation state-space models of fluctuating
//! stabilizing selection.
//!
//! The latent height, optimum and width of a Gaussian fitness function follow a
//! VAR(1) law in non-centered form. Fixed effects are estimated either by
//! maximizing a Laplace-approximated marginal likelihood ([`optimize`]) or by
//! sampling a posterior with NUTS ([`nuts`]), with or without marginalizing the
//! latent states.

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod laplace;
pub mod model;
pub mod nuts;
pub mod optimize;
pub mod oracles;
pub mod priors;
pub mod seeds;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    Dataset, Emission, GaussianEmission, LatentStates, ModelParams, NaturalProcesses, Observation,
    Structure,
};
