//! Laplace approximation of the latent integral.
//!
//! The inner problem is a Newton solve for the conditional mode of the
//! latents. Its Hessian is block tridiagonal (one block per year), so the
//! factorization, the log-determinant and the selected inverse needed for the
//! gradient all cost `O(T)`.

pub mod blocktri;
pub mod inner;
pub mod marginal;

pub use blocktri::{BlockCholesky, BlockTridiag, SelectedInverse};
pub use inner::{inner_mode, prior_precision, InnerSolve, INNER_MAX_ITERS, INNER_TOL};
pub use marginal::{evaluate, marginal_nll, marginal_nll_grad, LaplaceEval};
