//! Prior densities and the log-posterior.
//!
//! Scale priors are stated on `σ` (or `σ²`) while inference works on `log σ`;
//! [`jacobian_adjustment`] supplies the change-of-variables term.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::laplace::marginal_nll;
use crate::model::data::LatentStates;
use crate::model::density::joint_neg_log_density;
use crate::model::emission::Emission;
use crate::model::params::{Coord, ModelParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior on each process scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalePrior {
    /// Half-Cauchy on `σ` ("prior1").
    HalfCauchy { scale: f64 },
    /// Lognormal on `σ` ("prior2").
    LogNormal { meanlog: f64, sdlog: f64 },
    /// Inverse gamma on `σ²` ("invgamma").
    InverseGamma { shape: f64, rate: f64 },
    /// Improper flat prior on `log σ`.
    Flat,
}

impl ScalePrior {
    pub const PRIOR1: ScalePrior = ScalePrior::HalfCauchy { scale: 10.0 };
    pub const PRIOR2: ScalePrior = ScalePrior::LogNormal { meanlog: 1.0, sdlog: 0.5 };
    pub const INVGAMMA: ScalePrior = ScalePrior::InverseGamma { shape: 1.0, rate: 1.0 };

    /// Log density on its own scale (`σ`, or `σ²` for the inverse gamma).
    pub fn log_density(&self, sigma: f64) -> f64 {
        match *self {
            ScalePrior::HalfCauchy { scale } => {
                (2.0 / (PI * scale)).ln() - (1.0 + (sigma / scale).powi(2)).ln()
            }
            ScalePrior::LogNormal { meanlog, sdlog } => {
                let u = sigma.ln();
                -u - sdlog.ln() - 0.5 * LN_2PI - (u - meanlog).powi(2) / (2.0 * sdlog * sdlog)
            }
            ScalePrior::InverseGamma { shape, rate } => {
                let v = sigma * sigma;
                shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * v.ln() - rate / v
            }
            ScalePrior::Flat => 0.0,
        }
    }

    /// Cumulative distribution of `σ` implied by the prior.
    pub fn sigma_cdf(&self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        match *self {
            ScalePrior::HalfCauchy { scale } => 2.0 / PI * (sigma / scale).atan(),
            ScalePrior::LogNormal { meanlog, sdlog } => Normal::new(meanlog, sdlog).unwrap().cdf(sigma.ln()),
            ScalePrior::InverseGamma { shape, rate } => {
                statrs::function::gamma::gamma_ur(shape, rate / (sigma * sigma))
            }
            ScalePrior::Flat => f64::NAN,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalePrior::HalfCauchy { .. } => "prior1",
            ScalePrior::LogNormal { .. } => "prior2",
            ScalePrior::InverseGamma { .. } => "invgamma",
            ScalePrior::Flat => "flat",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "prior1" => Ok(Self::PRIOR1),
            "prior2" => Ok(Self::PRIOR2),
            "invgamma" => Ok(Self::INVGAMMA),
            other => Err(Error::InvalidConfig(format!(
                "unknown prior {other:?} (expected prior1, prior2 or invgamma)"
            ))),
        }
    }
}

/// Independent priors on the fixed effects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    /// Variance of the normal prior on each mean (mean zero); `None` for flat.
    pub mu_var: Option<f64>,
    /// Sd of the normal on each free transition entry, truncated to (−1, 1); `None` for flat.
    pub phi_sd: Option<f64>,
    pub scale: ScalePrior,
    /// Uniform(−1, 1) on each free correlation; `false` for flat.
    pub rho_uniform: bool,
}

impl PriorSpec {
    pub fn new(scale: ScalePrior) -> Self {
        Self {
            mu_var: Some(100.0),
            phi_sd: Some(0.5),
            scale,
            rho_uniform: true,
        }
    }

    /// Every component flat: the posterior is the likelihood.
    pub fn flat() -> Self {
        Self {
            mu_var: None,
            phi_sd: None,
            scale: ScalePrior::Flat,
            rho_uniform: false,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::new(ScalePrior::from_name(name)?))
    }
}

fn truncated_normal_log_norm(sd: f64) -> f64 {
    let n = Normal::new(0.0, sd).unwrap();
    (n.cdf(1.0) - n.cdf(-1.0)).ln()
}

/// Sum of the component log densities in natural parameterization
/// (scale priors on `σ` or `σ²`, without the change of variables).
pub fn log_prior(params: &ModelParams, spec: &PriorSpec) -> Result<f64> {
    Ok(log_prior_parts(params, spec)?.0)
}

/// Log prior of the free coordinates with the scale Jacobians included, and
/// its gradient over the free coordinates (natural scale, `log σ` for scales).
pub fn log_prior_grad(params: &ModelParams, spec: &PriorSpec) -> Result<(f64, Vec<f64>)> {
    let (lp, _) = log_prior_parts(params, spec)?;
    let mut value = lp;
    let mut grad = Vec::new();
    for c in params.structure.coords() {
        let x = params.get(c);
        grad.push(match c {
            Coord::Mu(_) => spec.mu_var.map_or(0.0, |q| -x / q),
            Coord::Phi(..) => spec.phi_sd.map_or(0.0, |sd| -x / (sd * sd)),
            Coord::LogSigma(_) => {
                value += jacobian_adjustment(spec, x);
                scale_log_space_slope(spec.scale, x)
            }
            Coord::Rho(_) => 0.0,
        });
    }
    Ok((value, grad))
}

/// Derivative in `u = log σ` of `log p(σ) + jacobian`.
fn scale_log_space_slope(scale: ScalePrior, u: f64) -> f64 {
    match scale {
        ScalePrior::HalfCauchy { scale } => {
            let r = (u.exp() / scale).powi(2);
            1.0 - 2.0 * r / (1.0 + r)
        }
        ScalePrior::LogNormal { meanlog, sdlog } => -(u - meanlog) / (sdlog * sdlog),
        ScalePrior::InverseGamma { shape, rate } => -2.0 * shape + 2.0 * rate * (-2.0 * u).exp(),
        ScalePrior::Flat => 0.0,
    }
}

fn log_prior_parts(params: &ModelParams, spec: &PriorSpec) -> Result<(f64, ())> {
    let mut acc = 0.0;
    for c in params.structure.coords() {
        let x = params.get(c);
        acc += match c {
            Coord::Mu(_) => match spec.mu_var {
                Some(q) => -0.5 * (2.0 * PI * q).ln() - x * x / (2.0 * q),
                None => 0.0,
            },
            Coord::Phi(..) => {
                if x.abs() >= 1.0 {
                    return Err(Error::OutOfSupport(format!("{} = {x} outside (-1, 1)", c.name())));
                }
                match spec.phi_sd {
                    Some(sd) => -0.5 * LN_2PI - sd.ln() - x * x / (2.0 * sd * sd) - truncated_normal_log_norm(sd),
                    None => 0.0,
                }
            }
            Coord::LogSigma(_) => spec.scale.log_density(x.exp()),
            Coord::Rho(_) => {
                if x.abs() >= 1.0 {
                    return Err(Error::OutOfSupport(format!("{} = {x} outside (-1, 1)", c.name())));
                }
                if spec.rho_uniform {
                    -LN_2
                } else {
                    0.0
                }
            }
        };
    }
    // joint support of the correlations
    crate::model::covariance::stationary_corr(&params.rho)
        .map_err(|_| Error::OutOfSupport("correlations are not jointly feasible".into()))?;
    Ok((acc, ()))
}

/// Change-of-variables term for one scale sampled on the log scale.
pub fn jacobian_adjustment(spec: &PriorSpec, log_sigma: f64) -> f64 {
    match spec.scale {
        ScalePrior::HalfCauchy { .. } | ScalePrior::LogNormal { .. } => log_sigma,
        ScalePrior::InverseGamma { .. } => LN_2 + 2.0 * log_sigma,
        ScalePrior::Flat => 0.0,
    }
}

/// Log posterior density over `(μ, Φ, log σ, ρ)` up to a constant.
///
/// With `marginalize` the latents are integrated out by the Laplace
/// approximation and `states` is ignored.
pub fn log_posterior<E: Emission>(
    params: &ModelParams,
    states: &LatentStates,
    data: &E,
    spec: &PriorSpec,
    marginalize: bool,
) -> Result<f64> {
    let (lp, _) = log_prior_grad(params, spec)?;
    let nll = if marginalize {
        marginal_nll(params, data)?
    } else {
        joint_neg_log_density(params, states, data)?
    };
    Ok(lp - nll)
}

/// Draws `σ` through its log: `u = log σ` is drawn from the log-space density
/// `p(σ(u)) · exp(jacobian(u))` by tabulated inverse CDF.
///
/// `jacobian` is a parameter so a deliberately wrong adjustment can be checked
/// to fail.
pub fn sample_via_log_scale<R: Rng, J: Fn(&PriorSpec, f64) -> f64>(
    spec: &PriorSpec,
    jacobian: J,
    n_draws: usize,
    rng: &mut R,
) -> Vec<f64> {
    let (lo, hi, m) = (-25.0, 40.0, 400_001usize);
    let du = (hi - lo) / (m - 1) as f64;
    let logd: Vec<f64> = (0..m)
        .map(|i| {
            let u = lo + i as f64 * du;
            spec.scale.log_density(u.exp()) + jacobian(spec, u)
        })
        .collect();
    let top = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logd.iter().map(|l| (l - top).exp()).collect();
    let mut cdf = vec![0.0; m];
    for i in 1..m {
        cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * du;
    }
    let total = cdf[m - 1];
    (0..n_draws)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let i = cdf.partition_point(|&c| c < target).clamp(1, m - 1);
            let frac = (target - cdf[i - 1]) / (cdf[i] - cdf[i - 1]).max(f64::MIN_POSITIVE);
            (lo + (i as f64 - 1.0 + frac) * du).exp()
        })
        .collect()
}

/// KS distance between [`sample_via_log_scale`] draws and the prior's analytic `σ` CDF.
pub fn change_of_variables_ks<R: Rng, J: Fn(&PriorSpec, f64) -> f64>(
    spec: &PriorSpec,
    jacobian: J,
    n_draws: usize,
    rng: &mut R,
) -> f64 {
    let mut draws = sample_via_log_scale(spec, jacobian, n_draws, rng);
    crate::diagnostics::ks_statistic(&mut draws, |s| spec.scale.sigma_cdf(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{Structure, THETA};
    use crate::seeds::{stream, Purpose};

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(lo + i as f64 * h)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn densities_integrate_to_one() {
        for scale in [ScalePrior::PRIOR1, ScalePrior::PRIOR2, ScalePrior::INVGAMMA] {
            let spec = PriorSpec::new(scale);
            let total = trapezoid(|u| (scale.log_density(u.exp()) + jacobian_adjustment(&spec, u)).exp(), -30.0, 40.0, 700_000);
            assert!((total - 1.0).abs() < 1e-6, "{scale:?}: {total}");
        }
        let tn = |x: f64| (-0.5 * LN_2PI - 0.5f64.ln() - x * x / 0.5 - truncated_normal_log_norm(0.5)).exp();
        assert!((trapezoid(tn, -1.0, 1.0, 200_000) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn component_examples() {
        let mut p = ModelParams::new(Structure::constant());
        p.mu = [0.0; 3];
        let spec = PriorSpec::new(ScalePrior::PRIOR1);
        assert!((log_prior(&p, &spec).unwrap() + 1.5 * (2.0 * PI * 100.0).ln()).abs() < 1e-12);
        assert!((ScalePrior::PRIOR1.log_density(0.0) - (2.0 / (PI * 10.0)).ln()).abs() < 1e-15);
        let mut q = ModelParams::new(Structure::ar1_theta());
        q.phi[THETA][THETA] = 1.2;
        assert!(matches!(log_prior(&q, &spec), Err(Error::OutOfSupport(_))));
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(jacobian_adjustment(&PriorSpec::new(ScalePrior::PRIOR1), 0.0), 0.0);
        assert!((jacobian_adjustment(&PriorSpec::new(ScalePrior::INVGAMMA), 0.0) - 0.6931).abs() < 1e-4);
        assert_eq!(jacobian_adjustment(&PriorSpec::new(ScalePrior::PRIOR2), 2.996), 2.996);
    }

    #[test]
    fn prior_is_additive_and_gradient_is_right() {
        let mut st = Structure::ar1_theta();
        st.stochastic[0] = true;
        st.phi_free[0][0] = true;
        st.rho_free[0] = true;
        let mut p = ModelParams::new(st);
        p.mu = [1.0, 15.0, 3.0];
        p.phi = [[0.2, 0.0, 0.0], [0.0, -0.5, 0.0], [0.0; 3]];
        p.log_sigma = [-1.0, 2.5, f64::NEG_INFINITY];
        p.rho[0] = 0.3;
        for scale in [ScalePrior::PRIOR1, ScalePrior::PRIOR2, ScalePrior::INVGAMMA] {
            let spec = PriorSpec::new(scale);
            let (v, g) = log_prior_grad(&p, &spec).unwrap();
            let x0 = p.free_values();
            for i in 0..x0.len() {
                let h = 1e-6;
                let mut up = x0.clone();
                let mut dn = x0.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = log_prior_grad(&p.with_free_values(&up).unwrap(), &spec).unwrap().0;
                let fd = log_prior_grad(&p.with_free_values(&dn).unwrap(), &spec).unwrap().0;
                assert!(((fu - fd) / (2.0 * h) - g[i]).abs() < 1e-6);
            }
            // additivity: dropping the correlation removes exactly log ½
            let mut q = p.clone();
            q.structure.rho_free[0] = false;
            q.rho[0] = 0.0;
            let (vq, _) = log_prior_grad(&q, &spec).unwrap();
            assert!((v - vq + LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_spec_gives_the_likelihood() {
        let data = crate::simulate::simulate_dataset(&crate::simulate::SimDesign { n_years: 6, mean_size: 10.0, ..Default::default() }).unwrap().0;
        let p = crate::simulate::SimDesign::default().params();
        let lp = log_posterior(&p, &LatentStates::zeros(6), &data, &PriorSpec::flat(), true).unwrap();
        assert_eq!(lp, -marginal_nll(&p, &data).unwrap());
        let lj = log_posterior(&p, &LatentStates::zeros(6), &data, &PriorSpec::flat(), false).unwrap();
        assert_eq!(lj, -joint_neg_log_density(&p, &LatentStates::zeros(6), &data).unwrap());
    }

    #[test]
    fn marginal_posterior_matches_the_kalman_likelihood() {
        let mut rng = stream(8, Purpose::Aux, 0);
        for _ in 0..5 {
            let (p, data) = crate::oracles::random_linear_gaussian(&mut rng, 12, 4);
            let spec = PriorSpec::new(ScalePrior::PRIOR2);
            let lp = log_posterior(&p, &LatentStates::zeros(12), &data, &spec, true).unwrap();
            let (prior, _) = log_prior_grad(&p, &spec).unwrap();
            let model = crate::oracles::LinearGaussianModel::from_params(&p, &data).unwrap();
            let want = prior - crate::oracles::kalman_nll(&model).unwrap();
            assert!((lp - want).abs() < 1e-6, "{lp} vs {want}");
        }
    }

    #[test]
    fn change_of_variables_reproduces_sigma_laws() {
        for scale in [ScalePrior::PRIOR1, ScalePrior::PRIOR2, ScalePrior::INVGAMMA] {
            let spec = PriorSpec::new(scale);
            let mut rng = stream(1, Purpose::Aux, 0);
            let ks = change_of_variables_ks(&spec, jacobian_adjustment, 100_000, &mut rng);
            assert!(ks < 0.02, "{scale:?}: {ks}");
            let wrong = change_of_variables_ks(&spec, |s, u| -jacobian_adjustment(s, u), 100_000, &mut rng);
            assert!(wrong > 0.02, "{scale:?}: sign error not caught ({wrong})");
        }
    }

    #[test]
    fn lognormal_log_scale_mean() {
        let spec = PriorSpec::new(ScalePrior::PRIOR2);
        let mut rng = stream(2, Purpose::Aux, 0);
        let draws = sample_via_log_scale(&spec, jacobian_adjustment, 100_000, &mut rng);
        let mean = draws.iter().map(|s| s.ln()).sum::<f64>() / draws.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }
}
