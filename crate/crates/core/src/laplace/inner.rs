//! Conditional mode of the latent states by damped Newton iterations.

use nalgebra::DMatrix;

use super::blocktri::{BlockCholesky, BlockTridiag};
use crate::error::{Error, Result};
use crate::model::covariance::ActiveCovariances;
use crate::model::data::LatentStates;
use crate::model::density::{eta_at, latent_prior_grad, latent_prior_nll};
use crate::model::emission::{Emission, YearTerms};
use crate::model::params::ModelParams;

/// Max-norm of the latent gradient at which the inner solve stops.
pub const INNER_TOL: f64 = 1e-8;
pub const INNER_MAX_ITERS: usize = 100;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// The joint density as a function of the compact latents, parameters fixed.
pub(crate) struct InnerProblem<'a, E> {
    pub params: &'a ModelParams,
    pub data: &'a E,
    pub cov: ActiveCovariances,
    pub sigma: [f64; 3],
    pub precision: BlockTridiag,
}

impl<'a, E: Emission> InnerProblem<'a, E> {
    pub fn new(params: &'a ModelParams, data: &'a E) -> Result<Self> {
        params.validate()?;
        let cov = ActiveCovariances::new(params)?;
        let sigma = std::array::from_fn(|a| params.sigma(a));
        let precision = prior_precision(&cov, data.n_years());
        Ok(Self {
            params,
            data,
            cov,
            sigma,
            precision,
        })
    }

    pub fn k(&self) -> usize {
        self.cov.k()
    }

    pub fn n_years(&self) -> usize {
        self.data.n_years()
    }

    pub fn eta(&self, s: &[f64], t: usize) -> [f64; 3] {
        let k = self.k();
        eta_at(self.params, &self.sigma, &self.cov.active, &s[t * k..(t + 1) * k])
    }

    pub fn terms(&self, s: &[f64], order: usize) -> Vec<YearTerms> {
        (0..self.n_years())
            .map(|t| self.data.year_terms(t, &self.eta(s, t), order))
            .collect()
    }

    pub fn value(&self, s: &[f64]) -> f64 {
        let mut v = latent_prior_nll(&self.cov, s, self.n_years());
        for t in 0..self.n_years() {
            v += self.data.year_terms(t, &self.eta(s, t), 0).value;
        }
        v
    }

    pub fn gradient(&self, s: &[f64], terms: &[YearTerms]) -> Vec<f64> {
        let k = self.k();
        let mut g = vec![0.0; s.len()];
        latent_prior_grad(&self.cov, s, self.n_years(), &mut g);
        for (t, tm) in terms.iter().enumerate() {
            for (j, &a) in self.cov.active.iter().enumerate() {
                g[t * k + j] += self.sigma[a] * tm.grad[a];
            }
        }
        g
    }

    pub fn hessian(&self, terms: &[YearTerms]) -> BlockTridiag {
        let mut h = self.precision.clone();
        let active = &self.cov.active;
        for (t, tm) in terms.iter().enumerate() {
            for (i, &a) in active.iter().enumerate() {
                for (j, &b) in active.iter().enumerate() {
                    h.diag[t][(i, j)] += self.sigma[a] * self.sigma[b] * tm.hess[a][b];
                }
            }
        }
        h
    }
}

/// Precision of the stationary VAR(1) law over the compact latents.
pub fn prior_precision(cov: &ActiveCovariances, n_years: usize) -> BlockTridiag {
    let k = cov.k();
    let w = &cov.sigma_w_inv;
    let ptwp = cov.phi.transpose() * w * &cov.phi;
    let diag = (0..n_years)
        .map(|t| {
            let mut d: DMatrix<f64> = if t == 0 { cov.gamma0_inv.clone() } else { w.clone() };
            if t + 1 < n_years {
                d += &ptwp;
            }
            d
        })
        .collect();
    let off = -(w * &cov.phi);
    BlockTridiag {
        k,
        diag,
        sub: vec![off; n_years.saturating_sub(1)],
    }
}

/// Result of the inner optimization.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub mode: LatentStates,
    /// Mode as a compact vector (active columns, year-major).
    pub compact: Vec<f64>,
    /// Joint negative log-density at the mode.
    pub value: f64,
    pub inner_hessian: BlockTridiag,
    pub newton_iters: usize,
    pub converged: bool,
    pub grad_max_norm: f64,
    /// Joint density after each accepted step, starting value first.
    pub value_trace: Vec<f64>,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Factorizes `h`, adding diagonal damping when it is not positive definite.
fn damped_factor(h: &BlockTridiag) -> Result<BlockCholesky> {
    if let Ok(c) = h.cholesky() {
        return Ok(c);
    }
    let scale = h
        .diag
        .iter()
        .flat_map(|d| d.diagonal().iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(1.0, f64::max);
    let mut lambda = 1e-6 * scale;
    for _ in 0..40 {
        if let Ok(c) = h.shifted(lambda).cholesky() {
            return Ok(c);
        }
        lambda *= 10.0;
    }
    Err(Error::InnerDivergence("inner Hessian could not be regularized".into()))
}

/// Mode of the joint density in the latents for fixed `params`.
pub fn inner_mode<E: Emission>(
    params: &ModelParams,
    data: &E,
    warm_start: Option<&LatentStates>,
) -> Result<InnerSolve> {
    let problem = InnerProblem::new(params, data)?;
    let start = warm_start.map(|w| w.compact(&problem.cov.active));
    solve(&problem, start)
}

pub(crate) fn solve<E: Emission>(problem: &InnerProblem<'_, E>, start: Option<Vec<f64>>) -> Result<InnerSolve> {
    let k = problem.k();
    let n = problem.n_years();
    let mut s = match start {
        Some(s) if s.len() == k * n && s.iter().all(|v| v.is_finite()) => s,
        _ => vec![0.0; k * n],
    };
    let mut value = problem.value(&s);
    if !value.is_finite() {
        s = vec![0.0; k * n];
        value = problem.value(&s);
        if !value.is_finite() {
            return Err(Error::NonFiniteValue);
        }
    }
    let mut iters = 0;
    let mut trace = vec![value];
    loop {
        let terms = problem.terms(&s, 2);
        let g = problem.gradient(&s, &terms);
        let gnorm = max_norm(&g);
        let h = problem.hessian(&terms);
        if !gnorm.is_finite() {
            return Err(Error::NonFiniteValue);
        }
        if gnorm < INNER_TOL || iters >= INNER_MAX_ITERS || k == 0 {
            return Ok(InnerSolve {
                mode: LatentStates::from_compact(&s, &problem.cov.active, n),
                compact: s,
                value,
                inner_hessian: h,
                newton_iters: iters,
                converged: gnorm < INNER_TOL || k == 0,
                grad_max_norm: gnorm,
                value_trace: trace,
            });
        }
        let factor = damped_factor(&h)?;
        let step: Vec<f64> = factor.solve(&g).iter().map(|v| -v).collect();
        let slope: f64 = step.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = s.iter().zip(&step).map(|(a, d)| a + alpha * d).collect();
            let tv = problem.value(&trial);
            if tv.is_finite() {
                if tv <= value + ARMIJO_C * alpha * slope {
                    accepted = Some((trial, tv));
                    break;
                }
                // At roundoff level, accept any step that shrinks the gradient.
                if (tv - value).abs() <= 1e-13 * (1.0 + value.abs()) {
                    let tg = problem.gradient(&trial, &problem.terms(&trial, 1));
                    if max_norm(&tg) < gnorm {
                        accepted = Some((trial, tv));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, tv)) => {
                s = trial;
                value = tv;
                trace.push(tv);
            }
            None => {
                return Err(Error::InnerDivergence(format!(
                    "line search failed at gradient norm {gnorm:e}"
                )))
            }
        }
        iters += 1;
    }
}
