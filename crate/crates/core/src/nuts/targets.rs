//! Sampling targets: Gaussian test densities and the model posterior.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::sampler::Target;
use crate::error::{Error, Result};
use crate::laplace::evaluate;
use crate::model::density::joint_nll_gradient;
use crate::model::emission::Emission;
use crate::model::params::{Coord, ModelParams, Structure};
use crate::priors::{log_prior_grad, PriorSpec};

/// Zero-mean multivariate normal given by its precision matrix.
#[derive(Debug, Clone)]
pub struct Gaussian {
    precision: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(precision: DMatrix<f64>) -> Self {
        Self { precision }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim))
    }

    /// Unit variances with correlation `r`.
    pub fn correlated_pair(r: f64) -> Self {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
        Self::new(cov.try_inverse().expect("|r| < 1"))
    }
}

impl Target for Gaussian {
    fn dim(&self) -> usize {
        self.precision.nrows()
    }

    fn log_density_grad(&mut self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = DVector::from_column_slice(q);
        let g = -(&self.precision * &x);
        Ok((0.5 * x.dot(&g), g.as_slice().to_vec()))
    }

    fn output_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }

    fn output(&self, q: &[f64]) -> Vec<f64> {
        q.to_vec()
    }
}

/// Model posterior over the free fixed effects, with the latent states either
/// sampled alongside (full-latent mode) or integrated out by the Laplace
/// approximation.
///
/// Unconstrained coordinates: `μ` and `log σ` as they are, `tanh⁻¹` of each
/// transition entry and correlation, then (full-latent mode only) the compact
/// latent vector. Draws are recorded in natural scale for the fixed effects only.
pub struct BayesTarget<E> {
    data: Arc<E>,
    template: ModelParams,
    coords: Vec<Coord>,
    spec: PriorSpec,
    marginalize: bool,
    n_latent: usize,
    center: Vec<f64>,
    warm: Option<Vec<f64>>,
}

impl<E> Clone for BayesTarget<E> {
    fn clone(&self) -> Self {
        Self {
            data: Arc::clone(&self.data),
            template: self.template.clone(),
            coords: self.coords.clone(),
            spec: self.spec.clone(),
            marginalize: self.marginalize,
            n_latent: self.n_latent,
            center: self.center.clone(),
            warm: self.warm.clone(),
        }
    }
}

impl<E: Emission + Send> BayesTarget<E> {
    pub fn new(data: Arc<E>, structure: Structure, spec: PriorSpec, marginalize: bool) -> Result<Self> {
        structure.validate()?;
        let mut template = ModelParams::new(structure);
        template.mu = data.moment_init();
        let coords = structure.coords();
        let n_latent = if marginalize { 0 } else { data.n_years() * structure.n_active() };
        let mut center: Vec<f64> = coords.iter().map(|&c| template.get(c)).collect();
        center.resize(coords.len() + n_latent, 0.0);
        Ok(Self { data, template, coords, spec, marginalize, n_latent, center, warm: None })
    }

    pub fn marginalized(&self) -> bool {
        self.marginalize
    }

    pub fn n_fixed(&self) -> usize {
        self.coords.len()
    }

    /// Natural-scale parameters for an unconstrained point.
    pub fn params_at(&self, q: &[f64]) -> ModelParams {
        let mut p = self.template.clone();
        for (&c, &v) in self.coords.iter().zip(q) {
            p.set(c, if c.is_bounded() { v.tanh() } else { v });
        }
        p
    }

    /// Unconstrained point for natural-scale parameters (latents zero).
    pub fn unconstrain(&self, params: &ModelParams) -> Vec<f64> {
        let mut q: Vec<f64> =
            self.coords.iter().map(|&c| if c.is_bounded() { params.get(c).atanh() } else { params.get(c) }).collect();
        q.resize(self.dim(), 0.0);
        q
    }

    fn eval(&mut self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let nf = self.coords.len();
        let params = self.params_at(q);
        params.validate()?;
        let (lp, prior_grad) = log_prior_grad(&params, &self.spec)?;
        let (nll, nll_fixed, nll_latent) = if self.marginalize {
            let ev = evaluate(&params, self.data.as_ref(), self.warm.as_deref(), true)?;
            self.warm = Some(ev.inner.compact.clone());
            (ev.nll, ev.grad.unwrap(), Vec::new())
        } else {
            let jg = joint_nll_gradient(&params, &q[nf..], self.data.as_ref())?;
            (jg.value, jg.fixed, jg.latent)
        };
        let mut value = lp - nll;
        let mut grad = Vec::with_capacity(q.len());
        for (i, &c) in self.coords.iter().enumerate() {
            let g = prior_grad[i] - nll_fixed[i];
            if c.is_bounded() {
                let x = params.get(c);
                let d = 1.0 - x * x;
                value += d.ln();
                grad.push(g * d - 2.0 * x);
            } else {
                grad.push(g);
            }
        }
        grad.extend(nll_latent.iter().map(|g| -g));
        if !value.is_finite() {
            return Err(Error::NonFiniteValue);
        }
        Ok((value, grad))
    }
}

impl<E: Emission + Send> Target for BayesTarget<E> {
    fn dim(&self) -> usize {
        self.coords.len() + self.n_latent
    }

    fn log_density_grad(&mut self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let out = self.eval(q);
        if out.is_err() {
            self.warm = None;
        }
        out
    }

    fn output_names(&self) -> Vec<String> {
        self.coords.iter().map(Coord::name).collect()
    }

    fn output(&self, q: &[f64]) -> Vec<f64> {
        let p = self.params_at(q);
        self.coords.iter().map(|&c| p.get(c)).collect()
    }

    fn init_center(&self) -> Vec<f64> {
        self.center.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{Coord, THETA};
    use crate::priors::ScalePrior;
    use crate::simulate::{ar1_alpha_theta, simulate_dataset, SimDesign};

    fn fd_check<T: Target>(t: &mut T, q: &[f64], tol: f64) {
        let (_, g) = t.log_density_grad(q).unwrap();
        for i in 0..q.len() {
            let h = 1e-5;
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (t.log_density_grad(&a).unwrap().0 - t.log_density_grad(&b).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < tol * (1.0 + fd.abs()), "coord {i}: fd {fd} vs {}", g[i]);
        }
    }

    fn small_data() -> Arc<crate::model::Dataset> {
        let design = SimDesign { n_years: 8, mean_size: 20.0, seed: 3, ..SimDesign::default() };
        Arc::new(simulate_dataset(&design).unwrap().0)
    }

    #[test]
    fn full_latent_gradient_matches_differences() {
        let data = small_data();
        let mut t = BayesTarget::new(data, ar1_alpha_theta(), PriorSpec::new(ScalePrior::PRIOR2), false).unwrap();
        let mut q = t.init_center();
        for (i, v) in q.iter_mut().enumerate() {
            *v += 0.1 * ((i as f64) * 0.7).sin();
        }
        fd_check(&mut t, &q, 1e-5);
    }

    #[test]
    fn marginal_gradient_matches_differences() {
        let data = small_data();
        let mut t = BayesTarget::new(data, ar1_alpha_theta(), PriorSpec::new(ScalePrior::PRIOR1), true).unwrap();
        let mut q = t.init_center();
        for (i, v) in q.iter_mut().enumerate() {
            *v += 0.1 * ((i as f64) * 0.9).cos();
        }
        fd_check(&mut t, &q, 1e-4);
    }

    #[test]
    fn coordinates_round_trip() {
        let t = BayesTarget::new(small_data(), Structure::ar1_theta(), PriorSpec::flat(), true).unwrap();
        let mut p = t.params_at(&t.init_center());
        p.set(Coord::Phi(THETA, THETA), 0.4);
        let back = t.params_at(&t.unconstrain(&p));
        assert!((back.phi[THETA][THETA] - 0.4).abs() < 1e-15);
        assert_eq!(t.output_names(), Structure::ar1_theta().free_names());
    }
}
