//! Maximum-likelihood fits of the fixed effects.

use nalgebra::DMatrix;

use super::bfgs::{minimize, BfgsOptions};
use crate::error::{Error, Result};
use crate::laplace::evaluate;
use crate::model::covariance::{cholesky, phi_matrix, spectral_radius};
use crate::model::emission::Emission;
use crate::model::params::{Coord, ModelParams, Structure};

/// Weight of the log barrier on `1 − spectral_radius(Φ)`.
pub const BARRIER_WEIGHT: f64 = 1e-6;
/// Distance from the unit circle at which the barrier switches on.
pub const BARRIER_ZONE: f64 = 1e-3;
/// Gradient max-norm accepted at an optimum.
pub const GRAD_TOL: f64 = 1e-5;
/// Gradient max-norm above which a finished fit is reported as not converged.
pub const CONVERGED_GRAD_TOL: f64 = 1e-3;
const POLISH_STEPS: usize = 6;

#[derive(Debug, Clone)]
pub struct MleFit {
    pub estimates: ModelParams,
    /// Per free coordinate (natural scale); NaN when the information is singular.
    pub std_errors: Vec<f64>,
    pub nll_at_opt: f64,
    pub n_free: usize,
    /// False when the final gradient max-norm is above [`CONVERGED_GRAD_TOL`].
    pub converged: bool,
    pub aic: f64,
    pub iterations: usize,
    /// Max-norm of the marginal gradient in natural coordinates.
    pub grad_max_norm: f64,
}

pub fn aic(n_free: usize, nll: f64) -> f64 {
    2.0 * n_free as f64 + 2.0 * nll
}

/// Optimizer coordinates: correlations through `atanh`, everything else raw.
pub fn to_unconstrained(params: &ModelParams) -> Vec<f64> {
    params
        .structure
        .coords()
        .into_iter()
        .map(|c| match c {
            Coord::Rho(_) => params.get(c).atanh(),
            _ => params.get(c),
        })
        .collect()
}

pub fn from_unconstrained(template: &ModelParams, u: &[f64]) -> ModelParams {
    let mut p = template.clone();
    for (c, &v) in template.structure.coords().into_iter().zip(u) {
        p.set(c, if matches!(c, Coord::Rho(_)) { v.tanh() } else { v });
    }
    p
}

fn barrier(params: &ModelParams) -> (f64, Vec<(Coord, f64)>) {
    let coords: Vec<Coord> = params
        .structure
        .coords()
        .into_iter()
        .filter(|c| matches!(c, Coord::Phi(..)))
        .collect();
    if coords.is_empty() {
        return (0.0, vec![]);
    }
    let value = |p: &ModelParams| {
        let margin = 1.0 - spectral_radius(&phi_matrix(&p.phi));
        if margin >= BARRIER_ZONE {
            0.0
        } else if margin > 0.0 {
            -BARRIER_WEIGHT * (margin / BARRIER_ZONE).ln()
        } else {
            f64::INFINITY
        }
    };
    let b = value(params);
    if b == 0.0 || !b.is_finite() {
        return (b, coords.iter().map(|&c| (c, 0.0)).collect());
    }
    let h = 1e-7;
    let grad = coords
        .iter()
        .map(|&c| {
            let mut up = params.clone();
            let mut dn = params.clone();
            up.set(c, params.get(c) + h);
            dn.set(c, params.get(c) - h);
            (c, (value(&up) - value(&dn)) / (2.0 * h))
        })
        .collect();
    (b, grad)
}

/// Moment-based starting point for `structure`.
pub fn default_init<E: Emission>(data: &E, structure: Structure) -> ModelParams {
    let mut p = ModelParams::new(structure);
    p.mu = data.moment_init();
    p
}

/// Negative log-likelihood and gradient in optimizer coordinates.
///
/// Every inner solve starts from the prior mean. Warm starts make the value
/// depend on the path when the conditional density of a year is bimodal, and
/// the line search then stalls on the resulting jumps.
struct Objective<'a, E> {
    template: ModelParams,
    data: &'a E,
}

impl<E: Emission> Objective<'_, E> {
    fn eval(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let p = from_unconstrained(&self.template, u);
        let (b, bgrad) = barrier(&p);
        if !b.is_finite() {
            return (f64::INFINITY, vec![0.0; u.len()]);
        }
        let res = match evaluate(&p, self.data, None, true) {
            Ok(r) => r,
            Err(_) => return (f64::INFINITY, vec![0.0; u.len()]),
        };
        let mut g = res.grad.unwrap();
        for (i, c) in p.structure.coords().into_iter().enumerate() {
            if let Coord::Rho(r) = c {
                g[i] *= 1.0 - p.rho[r] * p.rho[r];
            }
            if let Some(&(_, bg)) = bgrad.iter().find(|(bc, _)| *bc == c) {
                g[i] += bg;
            }
        }
        (res.nll + b, g)
    }
}

/// Fits `structure` to `data` by quasi-Newton minimization of the Laplace
/// marginal negative log-likelihood.
pub fn fit_mle<E: Emission>(data: &E, structure: Structure, init: Option<&ModelParams>) -> Result<MleFit> {
    structure.validate()?;
    let start = match init {
        Some(p) => p.restructure(structure),
        None => default_init(data, structure),
    };
    start.validate()?;
    let obj = Objective {
        template: start.clone(),
        data,
    };
    let u0 = to_unconstrained(&start);
    let res = minimize(|u| obj.eval(u), &u0, BfgsOptions::default())?;
    let mut estimates = from_unconstrained(&start, &res.x);
    let mut eval = evaluate(&estimates, data, None, true)?;
    let mut info = None;
    // Newton polish with the observed information; the relative-change stop
    // can leave a steep coordinate short of the gradient tolerance.
    for _ in 0..POLISH_STEPS {
        let g = eval.grad.clone().unwrap();
        let hess = observed_information(&estimates, data)?;
        if max_abs(&g) < GRAD_TOL {
            info = Some(hess);
            break;
        }
        let Some(chol) = hess.clone().cholesky() else {
            info = Some(hess);
            break;
        };
        let step = chol.solve(&nalgebra::DVector::from_column_slice(&g));
        let x = estimates.free_values();
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..8 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - scale * d).collect();
            if let Ok(tp) = estimates.with_free_values(&trial) {
                if let Ok(te) = evaluate(&tp, data, None, true) {
                    if te.nll <= eval.nll + 1e-9 * eval.nll.abs().max(1.0) && barrier(&tp).0 == 0.0 {
                        estimates = tp;
                        eval = te;
                        moved = true;
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        if !moved {
            info = Some(hess);
            break;
        }
    }
    let n_free = structure.n_free();
    let grad_max_norm = max_abs(eval.grad.as_ref().unwrap());
    let info = match info {
        Some(i) => Ok(i),
        None => observed_information(&estimates, data),
    };
    let std_errors = info
        .and_then(|i| standard_errors(&i))
        .unwrap_or_else(|_| vec![f64::NAN; n_free]);
    let nll = eval.nll;
    Ok(MleFit {
        estimates,
        std_errors,
        nll_at_opt: nll,
        n_free,
        converged: grad_max_norm < CONVERGED_GRAD_TOL,
        aic: aic(n_free, nll),
        iterations: res.iterations,
        grad_max_norm,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, g| m.max(g.abs()))
}

/// Hessian of the marginal negative log-likelihood in natural coordinates,
/// by central differences of the analytic gradient.
pub fn observed_information<E: Emission>(params: &ModelParams, data: &E) -> Result<DMatrix<f64>> {
    let x0 = params.free_values();
    let n = x0.len();
    let base = evaluate(params, data, None, false)?;
    let warm = base.inner.compact;
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-4 * x0[j].abs().max(1.0);
        let grad_at = |v: f64| -> Result<Vec<f64>> {
            let mut x = x0.clone();
            x[j] = v;
            Ok(evaluate(&params.with_free_values(&x)?, data, Some(&warm), true)?.grad.unwrap())
        };
        let gu = grad_at(x0[j] + step)?;
        let gd = grad_at(x0[j] - step)?;
        for i in 0..n {
            h[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Square roots of the diagonal of the inverse information.
pub fn standard_errors(info: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = info.nrows();
    // scale to unit diagonal so the pivot tolerance is meaningful
    let d: Vec<f64> = (0..n).map(|i| info[(i, i)].abs().sqrt().max(1e-300)).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| info[(i, j)] / (d[i] * d[j]));
    let l = cholesky(&scaled).map_err(|_| Error::SingularInformation)?;
    if (0..n).any(|i| !(info[(i, i)] > 0.0)) {
        return Err(Error::SingularInformation);
    }
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::SingularInformation)?;
    let inv = linv.transpose() * linv;
    let se: Vec<f64> = (0..n).map(|i| inv[(i, i)].sqrt() / d[i]).collect();
    if se.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(se)
    } else {
        Err(Error::SingularInformation)
    }
}
