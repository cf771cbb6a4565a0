//! Independent reference computations: a Kalman filter/smoother for
//! linear-Gaussian state-space models and adaptive Gauss–Hermite quadrature
//! for small Poisson models.

pub mod ghq;
pub mod kalman;

pub use ghq::{gauss_hermite, ghq_marginal, random_poisson_toy, MAX_GHQ_DIM};
pub use kalman::{random_linear_gaussian, kalman_filter, kalman_nll, rts_smoother, steady_state_gain, FilterOutput, LinearGaussianModel};
