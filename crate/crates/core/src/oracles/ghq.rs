//! Adaptive Gauss–Hermite quadrature of the latent integral.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::laplace::inner::{solve, InnerProblem};
use crate::model::covariance::cholesky;
use crate::model::emission::Emission;
use crate::model::params::ModelParams;

/// Largest latent dimension the tensor-product rule is allowed to integrate.
pub const MAX_GHQ_DIM: usize = 6;

/// Nodes and weights for `∫ f(x) e^{−x²} dx` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `−log ∫ exp(−J(s)) ds` by a tensor-product rule with `nodes_per_dim`
/// points, centered at the conditional mode and scaled by the Cholesky
/// factor of the inner Hessian.
pub fn ghq_marginal<E: Emission>(params: &ModelParams, data: &E, nodes_per_dim: usize) -> Result<f64> {
    let problem = InnerProblem::new(params, data)?;
    let d = problem.k() * problem.n_years();
    if d > MAX_GHQ_DIM {
        return Err(Error::DimensionTooLarge(d, MAX_GHQ_DIM));
    }
    let inner = solve(&problem, None)?;
    if d == 0 {
        return Ok(inner.value);
    }
    let h = inner.inner_hessian.to_dense();
    let l = cholesky(&h)?;
    let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let lt_inv = l
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(d, d))
        .ok_or(Error::NotPositiveDefinite)?;
    let (x, w) = gauss_hermite(nodes_per_dim);
    let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let total = nodes_per_dim.pow(d as u32);
    let mut terms = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    let mut s = vec![0.0; d];
    for _ in 0..total {
        let mut lw = 0.0;
        let mut sq = 0.0;
        for j in 0..d {
            lw += log_w[idx[j]];
            sq += x[idx[j]] * x[idx[j]];
        }
        for r in 0..d {
            let mut v = inner.compact[r];
            for j in r..d {
                v += std::f64::consts::SQRT_2 * lt_inv[(r, j)] * x[idx[j]];
            }
            s[r] = v;
        }
        terms.push(lw + sq - problem.value(&s));
        for j in 0..d {
            idx[j] += 1;
            if idx[j] < nodes_per_dim {
                break;
            }
            idx[j] = 0;
        }
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    let log_i = 0.5 * d as f64 * std::f64::consts::LN_2 - 0.5 * logdet + lse;
    Ok(-log_i)
}

/// A small Poisson instance (`n_years` years, `per_year` broods each) with
/// one or two stochastic processes. Latent paths are drawn per process
/// (ignoring the cross-correlation), which is enough for plausible data.
pub fn random_poisson_toy<R: rand::Rng>(
    rng: &mut R,
    n_years: usize,
    per_year: usize,
) -> (ModelParams, crate::model::data::Dataset) {
    use crate::model::data::{Dataset, Observation};
    use crate::model::params::{Structure, ALPHA, THETA};
    use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
    let mut st = Structure::ar1_theta();
    if rng.random_bool(0.5) {
        st.stochastic[ALPHA] = true;
        st.phi_free[ALPHA][ALPHA] = true;
        st.rho_free[0] = true;
    }
    let mut p = ModelParams::new(st);
    p.mu = [rng.random_range(1.0..2.5), 20.0, rng.random_range(2.5..3.5)];
    p.phi[THETA][THETA] = rng.random_range(-0.7..0.7);
    p.log_sigma[THETA] = rng.random_range(1.0..3.0);
    if st.stochastic[ALPHA] {
        p.phi[ALPHA][ALPHA] = rng.random_range(-0.7..0.7);
        p.log_sigma[ALPHA] = rng.random_range(-2.0..-0.5);
        p.rho[0] = rng.random_range(-0.7..0.7);
    }
    let phen = Normal::new(20.0, 20.0).unwrap();
    let mut s_prev = [0.0f64; 3];
    let mut observations = Vec::with_capacity(n_years);
    for t in 0..n_years {
        let mut s = [0.0; 3];
        for a in st.active() {
            let e: f64 = StandardNormal.sample(rng);
            let phi = p.phi[a][a];
            s[a] = if t == 0 { e } else { phi * s_prev[a] + (1.0 - phi * phi).sqrt() * e };
        }
        s_prev = s;
        let eta: [f64; 3] = std::array::from_fn(|a| p.mu[a] + p.sigma(a) * s[a]);
        let obs = (0..per_year)
            .map(|_| {
                let z = phen.sample(rng);
                let w = crate::model::emission::log_fitness(&eta, z).exp();
                let x = if w > 0.0 { Poisson::new(w).unwrap().sample(rng) as u32 } else { 0 };
                Observation { z, x }
            })
            .collect();
        observations.push(obs);
    }
    (p, Dataset::new((0..n_years as i64).collect(), observations).unwrap())
}
