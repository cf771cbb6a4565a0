//! Domain types and deterministic model mathematics.

pub mod covariance;
pub mod data;
pub mod density;
pub mod emission;
pub mod generic;
pub mod params;

pub use covariance::{innovation_cov, spectral_radius, stationary_corr, ActiveCovariances};
pub use data::{Dataset, LatentStates, NaturalProcesses, Observation};
pub use density::{joint_neg_log_density, joint_nll_compact, joint_nll_gradient, JointGradient};
pub use emission::{log_fitness, Emission, GaussianEmission, YearTerms};
pub use generic::JointDensityFn;
pub use params::{Coord, ModelParams, Structure, ALPHA, OMEGA, PROCESS_NAMES, RHO_PAIRS, THETA};
