//! Joint negative log-density of data and latent states, with analytic
//! gradients in the compact latent vector and the free fixed effects.

use nalgebra::DMatrix;

use super::covariance::ActiveCovariances;
use super::data::LatentStates;
use super::emission::Emission;
use super::params::{Coord, ModelParams, RHO_PAIRS};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn matvec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for i in 0..m.nrows() {
        out[i] = (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum();
    }
}

pub(crate) fn matvec_t(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for j in 0..m.ncols() {
        out[j] = (0..m.nrows()).map(|i| m[(i, j)] * x[i]).sum();
    }
}

/// `η_t` from the compact latent vector.
pub(crate) fn eta_at(params: &ModelParams, sigma: &[f64; 3], active: &[usize], s_t: &[f64]) -> [f64; 3] {
    let mut eta = params.mu;
    for (j, &a) in active.iter().enumerate() {
        eta[a] += sigma[a] * s_t[j];
    }
    eta
}

/// Innovation `e_t = s_t − Φ s_{t−1}` for `t ≥ 1`, or `s_0` itself.
fn innovation(cov: &ActiveCovariances, s: &[f64], t: usize, out: &mut [f64]) {
    let k = cov.k();
    let cur = &s[t * k..(t + 1) * k];
    if t == 0 {
        out.copy_from_slice(cur);
        return;
    }
    matvec(&cov.phi, &s[(t - 1) * k..t * k], out);
    for j in 0..k {
        out[j] = cur[j] - out[j];
    }
}

/// Negative log-density of the compact latents under the stationary VAR(1) law.
pub fn latent_prior_nll(cov: &ActiveCovariances, s: &[f64], n_years: usize) -> f64 {
    let k = cov.k();
    if k == 0 {
        return 0.0;
    }
    let mut e = vec![0.0; k];
    let mut we = vec![0.0; k];
    let mut acc = 0.5 * (cov.logdet_gamma0 + (n_years - 1) as f64 * cov.logdet_sigma_w)
        + 0.5 * (n_years * k) as f64 * LN_2PI;
    for t in 0..n_years {
        innovation(cov, s, t, &mut e);
        let m = if t == 0 { &cov.gamma0_inv } else { &cov.sigma_w_inv };
        matvec(m, &e, &mut we);
        acc += 0.5 * e.iter().zip(&we).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

/// Adds the gradient of [`latent_prior_nll`] with respect to `s` into `grad`.
pub fn latent_prior_grad(cov: &ActiveCovariances, s: &[f64], n_years: usize, grad: &mut [f64]) {
    let k = cov.k();
    if k == 0 {
        return;
    }
    let mut e = vec![0.0; k];
    let mut we = vec![0.0; k];
    let mut back = vec![0.0; k];
    for t in 0..n_years {
        innovation(cov, s, t, &mut e);
        let m = if t == 0 { &cov.gamma0_inv } else { &cov.sigma_w_inv };
        matvec(m, &e, &mut we);
        for j in 0..k {
            grad[t * k + j] += we[j];
        }
        if t > 0 {
            matvec_t(&cov.phi, &we, &mut back);
            for j in 0..k {
                grad[(t - 1) * k + j] -= back[j];
            }
        }
    }
}

/// Second moments of the latent path entering the covariance adjoint.
///
/// `first` stands for `s₁s₁ᵀ`; `lag`, `cross` and `lead` for the sums over
/// `t ≥ 2` of `s_{t−1}s_{t−1}ᵀ`, `s_{t−1}s_tᵀ` and `s_ts_tᵀ`. The Laplace
/// gradient passes corrected versions of these.
#[derive(Debug, Clone)]
pub struct LatentMoments {
    pub first: DMatrix<f64>,
    pub lag: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub lead: DMatrix<f64>,
}

impl LatentMoments {
    pub fn zeros(k: usize) -> Self {
        Self {
            first: DMatrix::zeros(k, k),
            lag: DMatrix::zeros(k, k),
            cross: DMatrix::zeros(k, k),
            lead: DMatrix::zeros(k, k),
        }
    }

    pub fn from_path(s: &[f64], k: usize, n_years: usize) -> Self {
        let mut m = Self::zeros(k);
        for a in 0..k {
            for b in 0..k {
                m.first[(a, b)] = s[a] * s[b];
            }
        }
        for t in 1..n_years {
            let p = &s[(t - 1) * k..t * k];
            let c = &s[t * k..(t + 1) * k];
            for a in 0..k {
                for b in 0..k {
                    m.lag[(a, b)] += p[a] * p[b];
                    m.cross[(a, b)] += p[a] * c[b];
                    m.lead[(a, b)] += c[a] * c[b];
                }
            }
        }
        m
    }
}

/// Gradient of `E[latent_prior_nll]` (expectation under moments `m`) with
/// respect to the full `Φ` (3×3) and the three correlations.
pub fn latent_prior_adjoint(
    cov: &ActiveCovariances,
    m: &LatentMoments,
    n_years: usize,
) -> ([[f64; 3]; 3], [f64; 3]) {
    let k = cov.k();
    let mut phi_bar = [[0.0; 3]; 3];
    let mut rho_bar = [0.0; 3];
    if k == 0 {
        return (phi_bar, rho_bar);
    }
    let g = &cov.gamma0_inv;
    let w = &cov.sigma_w_inv;
    let phi = &cov.phi;
    let n = phi * &m.lag * phi.transpose() - phi * &m.cross - m.cross.transpose() * phi.transpose()
        + &m.lead;
    let mut gamma_bar = -(g * &m.first * g) * 0.5 + g * 0.5;
    let sw_bar = if n_years > 1 {
        -(w * &n * w) * 0.5 + w * (0.5 * (n_years - 1) as f64)
    } else {
        DMatrix::zeros(k, k)
    };
    let pb = w * (phi * &m.lag - m.cross.transpose()) - (&sw_bar * phi * &cov.gamma0) * 2.0;
    gamma_bar += &sw_bar - phi.transpose() * &sw_bar * phi;
    let active = &cov.active;
    for i in 0..k {
        for j in 0..k {
            phi_bar[active[i]][active[j]] = pb[(i, j)];
        }
    }
    for (r, &(a, b)) in RHO_PAIRS.iter().enumerate() {
        if let (Some(i), Some(j)) = (
            active.iter().position(|&x| x == a),
            active.iter().position(|&x| x == b),
        ) {
            rho_bar[r] = gamma_bar[(i, j)] + gamma_bar[(j, i)];
        }
    }
    (phi_bar, rho_bar)
}

fn check_len<E: Emission>(params: &ModelParams, s: &[f64], data: &E) -> Result<usize> {
    let k = params.structure.n_active();
    if s.len() != k * data.n_years() {
        return Err(Error::DimensionMismatch(format!(
            "latent vector has {} entries, expected {}",
            s.len(),
            k * data.n_years()
        )));
    }
    Ok(k)
}

/// `−log p(data, states | params)`.
pub fn joint_neg_log_density<E: Emission>(
    params: &ModelParams,
    states: &LatentStates,
    data: &E,
) -> Result<f64> {
    if states.n_years() != data.n_years() {
        return Err(Error::DimensionMismatch(format!(
            "{} latent rows for {} years",
            states.n_years(),
            data.n_years()
        )));
    }
    let s = states.compact(&params.structure.active());
    joint_nll_compact(params, &s, data)
}

/// [`joint_neg_log_density`] on the compact (active-column, year-major) latent vector.
pub fn joint_nll_compact<E: Emission>(params: &ModelParams, s: &[f64], data: &E) -> Result<f64> {
    params.validate()?;
    let k = check_len(params, s, data)?;
    let cov = ActiveCovariances::new(params)?;
    let sigma: [f64; 3] = std::array::from_fn(|a| params.sigma(a));
    let mut acc = latent_prior_nll(&cov, s, data.n_years());
    for t in 0..data.n_years() {
        let eta = eta_at(params, &sigma, &cov.active, &s[t * k..(t + 1) * k]);
        acc += data.year_terms(t, &eta, 0).value;
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(Error::NonFiniteValue)
    }
}

/// Value and gradients of the joint negative log-density.
#[derive(Debug, Clone)]
pub struct JointGradient {
    pub value: f64,
    /// With respect to the compact latent vector.
    pub latent: Vec<f64>,
    /// With respect to the free fixed effects in natural coordinates.
    pub fixed: Vec<f64>,
}

pub fn joint_nll_gradient<E: Emission>(
    params: &ModelParams,
    s: &[f64],
    data: &E,
) -> Result<JointGradient> {
    params.validate()?;
    let k = check_len(params, s, data)?;
    let n_years = data.n_years();
    let cov = ActiveCovariances::new(params)?;
    let sigma: [f64; 3] = std::array::from_fn(|a| params.sigma(a));
    let active = &cov.active;

    let mut value = latent_prior_nll(&cov, s, n_years);
    let mut latent = vec![0.0; s.len()];
    latent_prior_grad(&cov, s, n_years, &mut latent);
    let mut mu_bar = [0.0; 3];
    let mut log_sigma_bar = [0.0; 3];
    for t in 0..n_years {
        let st = &s[t * k..(t + 1) * k];
        let eta = eta_at(params, &sigma, active, st);
        let terms = data.year_terms(t, &eta, 1);
        value += terms.value;
        for a in 0..3 {
            mu_bar[a] += terms.grad[a];
        }
        for (j, &a) in active.iter().enumerate() {
            latent[t * k + j] += sigma[a] * terms.grad[a];
            log_sigma_bar[a] += terms.grad[a] * sigma[a] * st[j];
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    let moments = LatentMoments::from_path(s, k, n_years);
    let (phi_bar, rho_bar) = latent_prior_adjoint(&cov, &moments, n_years);
    let fixed = collect_fixed(params, &mu_bar, &phi_bar, &log_sigma_bar, &rho_bar);
    Ok(JointGradient {
        value,
        latent,
        fixed,
    })
}

/// Orders per-block partials by the structure's free coordinates.
pub(crate) fn collect_fixed(
    params: &ModelParams,
    mu_bar: &[f64; 3],
    phi_bar: &[[f64; 3]; 3],
    log_sigma_bar: &[f64; 3],
    rho_bar: &[f64; 3],
) -> Vec<f64> {
    params
        .structure
        .coords()
        .into_iter()
        .map(|c| match c {
            Coord::Mu(a) => mu_bar[a],
            Coord::Phi(i, j) => phi_bar[i][j],
            Coord::LogSigma(a) => log_sigma_bar[a],
            Coord::Rho(r) => rho_bar[r],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::data::{Dataset, Observation};
    use crate::model::params::{Structure, ALPHA, THETA};
    use statrs::distribution::{Discrete, Poisson};

    fn glm_data() -> Dataset {
        Dataset::new(
            vec![2000, 2001, 2002],
            vec![
                vec![Observation { z: 19.0, x: 4 }, Observation { z: 25.0, x: 7 }],
                vec![Observation { z: 14.0, x: 2 }],
                vec![Observation { z: 22.0, x: 0 }, Observation { z: 30.0, x: 5 }],
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_observation_matches_scalar_densities() {
        let mut p = ModelParams::new(Structure::ar1_theta());
        p.mu = [2.0, 20.0, 3.5];
        let data = Dataset::new(vec![1], vec![vec![Observation { z: 20.0, x: 7 }]]).unwrap();
        let got = joint_neg_log_density(&p, &LatentStates::zeros(1), &data).unwrap();
        let pois = -Poisson::new(2.0f64.exp()).unwrap().ln_pmf(7);
        let normal = 0.5 * LN_2PI;
        assert!((got - (pois + normal)).abs() < 1e-12);
    }

    #[test]
    fn constant_processes_give_the_poisson_glm() {
        let mut p = ModelParams::new(Structure::constant());
        p.mu = [1.1, 21.0, 2.0];
        let data = glm_data();
        let got = joint_neg_log_density(&p, &LatentStates::zeros(3), &data).unwrap();
        let mut want = 0.0;
        for (_, z, x) in data.records() {
            let w = super::super::emission::log_fitness(&p.mu, z).exp();
            want -= Poisson::new(w).unwrap().ln_pmf(x as u64);
        }
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn duplicated_observations_double_the_poisson_part() {
        let mut p = ModelParams::new(Structure::ar1_theta());
        p.mu = [1.0, 20.0, 2.0];
        p.phi[THETA][THETA] = 0.3;
        let data = glm_data();
        let doubled = Dataset::new(
            data.years().to_vec(),
            data.observations()
                .iter()
                .map(|o| o.iter().chain(o.iter()).copied().collect())
                .collect(),
        )
        .unwrap();
        let states = LatentStates {
            states: vec![[0.0, 0.4, 0.0], [0.0, -0.2, 0.0], [0.0, 1.0, 0.0]],
        };
        let s = states.compact(&[THETA]);
        let cov = ActiveCovariances::new(&p).unwrap();
        let prior = latent_prior_nll(&cov, &s, 3);
        let one = joint_neg_log_density(&p, &states, &data).unwrap() - prior;
        let two = joint_neg_log_density(&p, &states, &doubled).unwrap() - prior;
        assert!((two - 2.0 * one).abs() < 1e-10 * one.abs());
    }

    #[test]
    fn within_year_permutation_is_invisible() {
        let p = {
            let mut p = ModelParams::new(Structure::ar1_theta());
            p.mu = [1.0, 20.0, 2.0];
            p
        };
        let data = glm_data();
        let swapped = Dataset::new(
            data.years().to_vec(),
            data.observations()
                .iter()
                .map(|o| o.iter().rev().copied().collect())
                .collect(),
        )
        .unwrap();
        let st = LatentStates {
            states: vec![[0.0, 0.1, 0.0], [0.0, 0.2, 0.0], [0.0, 0.3, 0.0]],
        };
        let a = joint_neg_log_density(&p, &st, &data).unwrap();
        let b = joint_neg_log_density(&p, &st, &swapped).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let mut st = Structure::ar1_theta();
        st.stochastic[ALPHA] = true;
        st.phi_free[ALPHA][ALPHA] = true;
        st.phi_free[THETA][ALPHA] = true;
        st.rho_free[0] = true;
        let mut p = ModelParams::new(st);
        p.mu = [1.0, 20.0, 2.0];
        p.phi[ALPHA][ALPHA] = 0.3;
        p.phi[THETA][THETA] = 0.5;
        p.phi[THETA][ALPHA] = -0.2;
        p.rho[0] = -0.4;
        p.log_sigma = [-1.0, 1.2, f64::NEG_INFINITY];
        let data = glm_data();
        let s = vec![0.3, -0.5, 0.1, 0.8, -0.7, 0.2];
        let g = joint_nll_gradient(&p, &s, &data).unwrap();
        let x0 = p.free_values();
        for i in 0..x0.len() {
            let h = 1e-6;
            let mut up = x0.clone();
            let mut dn = x0.clone();
            up[i] += h;
            dn[i] -= h;
            let fu = joint_nll_compact(&p.with_free_values(&up).unwrap(), &s, &data).unwrap();
            let fd = joint_nll_compact(&p.with_free_values(&dn).unwrap(), &s, &data).unwrap();
            let num = (fu - fd) / (2.0 * h);
            assert!((num - g.fixed[i]).abs() < 1e-6 * (1.0 + num.abs()), "coord {i}: {num} vs {}", g.fixed[i]);
        }
        for i in 0..s.len() {
            let h = 1e-6;
            let mut up = s.clone();
            let mut dn = s.clone();
            up[i] += h;
            dn[i] -= h;
            let num = (joint_nll_compact(&p, &up, &data).unwrap()
                - joint_nll_compact(&p, &dn, &data).unwrap())
                / (2.0 * h);
            assert!((num - g.latent[i]).abs() < 1e-6 * (1.0 + num.abs()));
        }
    }
}
