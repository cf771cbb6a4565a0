//! Kalman filter (prediction-error decomposition) and RTS smoother.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::covariance::{cholesky, ActiveCovariances};
use crate::model::emission::GaussianEmission;
use crate::model::params::ModelParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One observation block: `y = offset + design · state + N(0, noise_var I)`.
#[derive(Debug, Clone)]
pub struct ObservationBlock {
    pub design: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub y: DVector<f64>,
}

/// Time-invariant linear-Gaussian state-space model with an explicit initial law.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    pub transition: DMatrix<f64>,
    pub init_cov: DMatrix<f64>,
    pub state_noise: DMatrix<f64>,
    pub noise_var: f64,
    pub blocks: Vec<ObservationBlock>,
}

impl LinearGaussianModel {
    /// The Gaussian-emission version of the state-space model for `params`,
    /// over the standardized latents of the stochastic processes.
    pub fn from_params(params: &ModelParams, data: &GaussianEmission) -> Result<Self> {
        let cov = ActiveCovariances::new(params)?;
        let active = cov.active.clone();
        let k = active.len();
        let blocks = data
            .years
            .iter()
            .map(|obs| {
                let n = obs.len();
                let mut design = DMatrix::zeros(n, k);
                let mut offset = DVector::zeros(n);
                let mut y = DVector::zeros(n);
                for (i, &(u, yi)) in obs.iter().enumerate() {
                    let h = GaussianEmission::design_row(u);
                    offset[i] = (0..3).map(|a| h[a] * params.mu[a]).sum();
                    for (j, &a) in active.iter().enumerate() {
                        design[(i, j)] = h[a] * params.sigma(a);
                    }
                    y[i] = yi;
                }
                ObservationBlock { design, offset, y }
            })
            .collect();
        Ok(Self {
            transition: cov.phi,
            init_cov: cov.gamma0,
            state_noise: cov.sigma_w,
            noise_var: data.sd * data.sd,
            blocks,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub nll: f64,
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    /// Kalman gain per time step.
    pub gains: Vec<DMatrix<f64>>,
}

fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let l = cholesky(a)?;
    let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let y = l.solve_lower_triangular(b).ok_or(Error::NotPositiveDefinite)?;
    let x = l.transpose().solve_upper_triangular(&y).ok_or(Error::NotPositiveDefinite)?;
    Ok((x, logdet))
}

pub fn kalman_filter(model: &LinearGaussianModel) -> Result<FilterOutput> {
    let k = model.transition.nrows();
    let mut out = FilterOutput {
        nll: 0.0,
        predicted_means: vec![],
        predicted_covs: vec![],
        filtered_means: vec![],
        filtered_covs: vec![],
        gains: vec![],
    };
    let mut m = DVector::zeros(k);
    let mut p = model.init_cov.clone();
    for (t, b) in model.blocks.iter().enumerate() {
        if t > 0 {
            m = &model.transition * &m;
            p = &model.transition * &p * model.transition.transpose() + &model.state_noise;
        }
        out.predicted_means.push(m.clone());
        out.predicted_covs.push(p.clone());
        let n = b.y.len();
        let resid = &b.y - &b.offset - &b.design * &m;
        let f = &b.design * &p * b.design.transpose() + DMatrix::identity(n, n) * model.noise_var;
        let f = (&f + f.transpose()) * 0.5;
        let rhs = DMatrix::from_columns(&[resid.clone()]);
        let (finv_r, logdet) = spd_solve(&f, &rhs)?;
        out.nll += 0.5 * (n as f64 * LN_2PI + logdet + resid.dot(&finv_r.column(0)));
        // K = P Hᵀ F⁻¹
        let (finv_h, _) = spd_solve(&f, &(&b.design * &p))?;
        let gain = finv_h.transpose();
        m = &m + &gain * &resid;
        p = &p - &gain * &b.design * &p;
        p = (&p + p.transpose()) * 0.5;
        out.filtered_means.push(m.clone());
        out.filtered_covs.push(p.clone());
        out.gains.push(gain);
    }
    Ok(out)
}

/// Prediction-error negative log-likelihood.
pub fn kalman_nll(model: &LinearGaussianModel) -> Result<f64> {
    Ok(kalman_filter(model)?.nll)
}

/// Conditional means of the states given all observations.
pub fn rts_smoother(model: &LinearGaussianModel) -> Result<Vec<DVector<f64>>> {
    let f = kalman_filter(model)?;
    let n = f.filtered_means.len();
    let mut means = f.filtered_means.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        // C = P_t Aᵀ P⁻_{t+1}⁻¹
        let (x, _) = spd_solve(&f.predicted_covs[t + 1], &(&model.transition * &f.filtered_covs[t]))?;
        let c = x.transpose();
        means[t] = &f.filtered_means[t] + c * (&means[t + 1] - &f.predicted_means[t + 1]);
    }
    Ok(means)
}

/// Steady-state gain of the local-level model `s_t = s_{t−1} + N(0, q)`,
/// `y_t = s_t + N(0, r)`.
pub fn steady_state_gain(q: f64, r: f64) -> f64 {
    let p_pred = (q + (q * q + 4.0 * q * r).sqrt()) / 2.0;
    p_pred / (p_pred + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local_level(q: f64, r: f64, n: usize) -> LinearGaussianModel {
        LinearGaussianModel {
            transition: DMatrix::identity(1, 1),
            init_cov: DMatrix::from_element(1, 1, 10.0),
            state_noise: DMatrix::from_element(1, 1, q),
            noise_var: r,
            blocks: (0..n)
                .map(|t| ObservationBlock {
                    design: DMatrix::identity(1, 1),
                    offset: DVector::zeros(1),
                    y: DVector::from_element(1, (t as f64 * 0.3).sin()),
                })
                .collect(),
        }
    }

    #[test]
    fn local_level_gain_reaches_riccati_fixed_point() {
        let (q, r) = (0.3, 1.7);
        let out = kalman_filter(&local_level(q, r, 200)).unwrap();
        let last = out.gains.last().unwrap()[(0, 0)];
        assert!((last - steady_state_gain(q, r)).abs() < 1e-10);
    }

    #[test]
    fn noiseless_model_is_rejected() {
        let mut m = local_level(0.0, 0.0, 3);
        m.init_cov = DMatrix::zeros(1, 1);
        assert_eq!(kalman_nll(&m), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn single_step_is_a_gaussian_density() {
        let m = local_level(0.5, 2.0, 1);
        let y = m.blocks[0].y[0];
        let var: f64 = 10.0 + 2.0;
        let want = 0.5 * (LN_2PI + var.ln() + y * y / var);
        assert!((kalman_nll(&m).unwrap() - want).abs() < 1e-14);
    }
}

/// A random stationary instance of the Gaussian-emission model with data
/// drawn from it. Used by the oracle checks.
pub fn random_linear_gaussian<R: rand::Rng>(rng: &mut R, n_years: usize, per_year: usize) -> (ModelParams, GaussianEmission) {
    use crate::model::params::Structure;
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let mut st = Structure::constant();
        for a in 0..3 {
            st.stochastic[a] = rng.random_bool(0.6);
        }
        if st.n_active() == 0 {
            st.stochastic[rng.random_range(0..3)] = true;
        }
        let active = st.active();
        for &i in &active {
            for &j in &active {
                st.phi_free[i][j] = i == j || rng.random_bool(0.3);
            }
        }
        for (r, &(a, b)) in crate::model::params::RHO_PAIRS.iter().enumerate() {
            st.rho_free[r] = st.stochastic[a] && st.stochastic[b] && rng.random_bool(0.5);
        }
        let mut p = ModelParams::new(st);
        for a in 0..3 {
            p.mu[a] = rng.random_range(-1.0..1.0);
        }
        for c in st.coords() {
            let v = match c {
                crate::model::params::Coord::Mu(_) => continue,
                crate::model::params::Coord::Phi(i, j) if i == j => rng.random_range(-0.8..0.8),
                crate::model::params::Coord::Phi(..) => rng.random_range(-0.3..0.3),
                crate::model::params::Coord::LogSigma(_) => rng.random_range(-1.0..0.5),
                crate::model::params::Coord::Rho(_) => rng.random_range(-0.6..0.6),
            };
            p.set(c, v);
        }
        let Ok(cov) = ActiveCovariances::new(&p) else { continue };
        if p.validate().is_err() {
            continue;
        }
        let sd = rng.random_range(0.4..1.5);
        // latent path from the stationary law
        let k = cov.k();
        let lg = cholesky(&cov.gamma0).unwrap();
        let lw = cholesky(&cov.sigma_w).unwrap_or_else(|_| DMatrix::zeros(k, k));
        let mut s = DVector::zeros(k);
        let mut years = Vec::with_capacity(n_years);
        for t in 0..n_years {
            let e = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
            s = if t == 0 { &lg * e } else { &cov.phi * &s + &lw * e };
            let mut eta = p.mu;
            for (j, &a) in cov.active.iter().enumerate() {
                eta[a] += p.sigma(a) * s[j];
            }
            let obs = (0..per_year)
                .map(|_| {
                    let u: f64 = rng.random_range(-1.5..1.5);
                    let h = GaussianEmission::design_row(u);
                    let noise: f64 = StandardNormal.sample(rng);
                    (u, h[0] * eta[0] + h[1] * eta[1] + h[2] * eta[2] + sd * noise)
                })
                .collect();
            years.push(obs);
        }
        return (p, GaussianEmission::new(years, sd).unwrap());
    }
}
