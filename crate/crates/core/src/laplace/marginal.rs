//! Laplace-approximated marginal likelihood and its gradient.

use nalgebra::DMatrix;

use super::inner::{solve, InnerProblem, InnerSolve};
use crate::error::{Error, Result};
use crate::model::density::{collect_fixed, latent_prior_adjoint, LatentMoments};
use crate::model::emission::Emission;
use crate::model::params::ModelParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Marginal negative log-likelihood with the inner solve it came from.
#[derive(Debug, Clone)]
pub struct LaplaceEval {
    pub nll: f64,
    /// Gradient over the free fixed effects in natural coordinates, when requested.
    pub grad: Option<Vec<f64>>,
    pub inner: InnerSolve,
}

/// `J(ŝ) + ½ log det H − (n_latent/2) log 2π`.
pub fn marginal_nll<E: Emission>(params: &ModelParams, data: &E) -> Result<f64> {
    Ok(evaluate(params, data, None, false)?.nll)
}

pub fn marginal_nll_grad<E: Emission>(params: &ModelParams, data: &E) -> Result<Vec<f64>> {
    Ok(evaluate(params, data, None, true)?.grad.unwrap())
}

/// Runs the inner solve (optionally warm-started from a compact latent
/// vector) and assembles the marginal value and, if asked, its gradient.
pub fn evaluate<E: Emission>(
    params: &ModelParams,
    data: &E,
    warm: Option<&[f64]>,
    want_grad: bool,
) -> Result<LaplaceEval> {
    let problem = InnerProblem::new(params, data)?;
    let inner = solve(&problem, warm.map(<[f64]>::to_vec))?;
    if !inner.converged {
        return Err(Error::InnerDivergence(format!(
            "no convergence after {} Newton steps (gradient {:e})",
            inner.newton_iters, inner.grad_max_norm
        )));
    }
    let k = problem.k();
    let n = problem.n_years();
    if k == 0 {
        let grad = want_grad.then(|| {
            let terms = problem.terms(&[], 1);
            let mut mu_bar = [0.0; 3];
            for tm in &terms {
                for a in 0..3 {
                    mu_bar[a] += tm.grad[a];
                }
            }
            collect_fixed(params, &mu_bar, &[[0.0; 3]; 3], &[0.0; 3], &[0.0; 3])
        });
        return Ok(LaplaceEval {
            nll: inner.value,
            grad,
            inner,
        });
    }
    let factor = inner.inner_hessian.cholesky()?;
    let nll = inner.value + 0.5 * factor.logdet() - 0.5 * (n * k) as f64 * LN_2PI;
    if !nll.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    if !want_grad {
        return Ok(LaplaceEval {
            nll,
            grad: None,
            inner,
        });
    }

    let s = &inner.compact;
    let active = &problem.cov.active;
    let sigma = problem.sigma;
    let terms = problem.terms(s, 3);
    let z = factor.selected_inverse();

    // derivative of ½ log det H in the latents, then v = H⁻¹ g
    let mut g_logdet = vec![0.0; n * k];
    for t in 0..n {
        for (ia, &a) in active.iter().enumerate() {
            let mut acc = 0.0;
            for (ib, &b) in active.iter().enumerate() {
                for (ic, &c) in active.iter().enumerate() {
                    acc += z.diag[t][(ib, ic)] * sigma[b] * sigma[c] * terms[t].third[b][c][a];
                }
            }
            g_logdet[t * k + ia] = 0.5 * acc * sigma[a];
        }
    }
    let v = factor.solve(&g_logdet);

    let mut mu_bar = [0.0; 3];
    let mut ls_bar = [0.0; 3];
    for t in 0..n {
        let tm = &terms[t];
        let st = &s[t * k..(t + 1) * k];
        let vt = &v[t * k..(t + 1) * k];
        let zt = &z.diag[t];
        for j in 0..3 {
            let mut acc = tm.grad[j];
            for (ib, &b) in active.iter().enumerate() {
                for (ic, &c) in active.iter().enumerate() {
                    acc += 0.5 * zt[(ib, ic)] * sigma[b] * sigma[c] * tm.third[b][c][j];
                }
            }
            for (ia, &a) in active.iter().enumerate() {
                acc -= vt[ia] * sigma[a] * tm.hess[a][j];
            }
            mu_bar[j] += acc;
        }
        for (ij, &j) in active.iter().enumerate() {
            let ds = sigma[j] * st[ij];
            let mut acc = tm.grad[j] * ds;
            for (ib, &b) in active.iter().enumerate() {
                for (ic, &c) in active.iter().enumerate() {
                    let mut dh = sigma[b] * sigma[c] * tm.third[b][c][j] * ds;
                    if b == j {
                        dh += sigma[b] * sigma[c] * tm.hess[b][c];
                    }
                    if c == j {
                        dh += sigma[b] * sigma[c] * tm.hess[b][c];
                    }
                    acc += 0.5 * zt[(ib, ic)] * dh;
                }
            }
            for (ia, &a) in active.iter().enumerate() {
                let mut cross = sigma[a] * tm.hess[a][j] * ds;
                if a == j {
                    cross += sigma[a] * tm.grad[a];
                }
                acc -= vt[ia] * cross;
            }
            ls_bar[j] += acc;
        }
    }

    let moments = corrected_moments(s, &v, &z.diag, &z.sub, k, n);
    let (phi_bar, rho_bar) = latent_prior_adjoint(&problem.cov, &moments, n);
    let grad = collect_fixed(params, &mu_bar, &phi_bar, &ls_bar, &rho_bar);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteValue);
    }
    Ok(LaplaceEval {
        nll,
        grad: Some(grad),
        inner,
    })
}

/// Moments `ssᵀ + Z − (vsᵀ + svᵀ)` block by block.
fn corrected_moments(
    s: &[f64],
    v: &[f64],
    zd: &[DMatrix<f64>],
    zs: &[DMatrix<f64>],
    k: usize,
    n: usize,
) -> LatentMoments {
    let block = |p: usize, q: usize, zpq: &DMatrix<f64>| {
        DMatrix::from_fn(k, k, |a, b| {
            s[p * k + a] * s[q * k + b] + zpq[(a, b)] - v[p * k + a] * s[q * k + b] - s[p * k + a] * v[q * k + b]
        })
    };
    let mut m = LatentMoments::zeros(k);
    m.first = block(0, 0, &zd[0]);
    for t in 1..n {
        m.lag += block(t - 1, t - 1, &zd[t - 1]);
        // Z_{t−1,t} = (Z_{t,t−1})ᵀ
        m.cross += block(t - 1, t, &zs[t - 1].transpose());
        m.lead += block(t, t, &zd[t]);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::inner::inner_mode;
    use crate::model::data::{Dataset, LatentStates, Observation};
    use crate::model::params::{Structure, ALPHA, THETA};
    use crate::oracles::{kalman_nll, random_linear_gaussian, random_poisson_toy, rts_smoother, LinearGaussianModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check<E: Emission>(p: &ModelParams, data: &E, tol: f64) {
        let g = marginal_nll_grad(p, data).unwrap();
        let x0 = p.free_values();
        for i in 0..x0.len() {
            let h = 1e-5 * x0[i].abs().max(1.0);
            let mut up = x0.clone();
            let mut dn = x0.clone();
            up[i] += h;
            dn[i] -= h;
            let fu = marginal_nll(&p.with_free_values(&up).unwrap(), data).unwrap();
            let fd = marginal_nll(&p.with_free_values(&dn).unwrap(), data).unwrap();
            let num = (fu - fd) / (2.0 * h);
            assert!(
                (num - g[i]).abs() < tol * num.abs().max(1.0),
                "{}: fd {num} analytic {}",
                p.structure.free_names()[i],
                g[i]
            );
        }
    }

    #[test]
    fn gaussian_instances_match_kalman() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..8 {
            let (p, data) = random_linear_gaussian(&mut rng, 25, 3);
            let lg = LinearGaussianModel::from_params(&p, &data).unwrap();
            let want = kalman_nll(&lg).unwrap();
            let got = marginal_nll(&p, &data).unwrap();
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            let mode = inner_mode(&p, &data, None).unwrap();
            let smooth = rts_smoother(&lg).unwrap();
            for (t, m) in smooth.iter().enumerate() {
                for j in 0..m.len() {
                    assert!((mode.compact[t * m.len() + j] - m[j]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_differences_on_gaussian_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let (p, data) = random_linear_gaussian(&mut rng, 12, 2);
            fd_check(&p, &data, 1e-5);
        }
    }

    #[test]
    fn gradient_matches_differences_on_poisson_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..6 {
            let (p, data) = random_poisson_toy(&mut rng, 10, 8);
            fd_check(&p, &data, 1e-5);
        }
    }

    #[test]
    fn white_single_year_reduces_to_scalar_newton() {
        let mut st = Structure::constant();
        st.stochastic = [true; 3];
        let mut p = ModelParams::new(st);
        p.mu = [1.2, 20.0, 3.0];
        p.log_sigma = [-0.4, 1.0, -1.0];
        let data = Dataset::new(vec![0], vec![vec![Observation { z: 20.0, x: 6 }]]).unwrap();
        let sol = inner_mode(&p, &data, None).unwrap();
        // σ e^{μ+σs} − xσ + s = 0
        let sig = (-0.4f64).exp();
        let mut s = 0.0;
        for _ in 0..100 {
            let f = sig * (1.2 + sig * s).exp() - 6.0 * sig + s;
            let df = sig * sig * (1.2 + sig * s).exp() + 1.0;
            s -= f / df;
        }
        assert!((sol.compact[0] - s).abs() < 1e-10);
        assert!(sol.compact[1].abs() < 1e-10 && sol.compact[2].abs() < 1e-10);
    }

    #[test]
    fn warm_start_at_mode_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, data) = random_poisson_toy(&mut rng, 12, 10);
        let cold = inner_mode(&p, &data, None).unwrap();
        let warm = inner_mode(&p, &data, Some(&cold.mode)).unwrap();
        assert!(warm.newton_iters <= 2);
        assert!(cold.value_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()));
    }

    #[test]
    fn warm_starts_along_a_path_do_not_cost_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (p, data) = random_poisson_toy(&mut rng, 15, 10);
        let mut warm: Option<LatentStates> = None;
        let (mut cold_iters, mut warm_iters) = (vec![], vec![]);
        for i in 0..15 {
            let mut q = p.clone();
            q.mu[ALPHA] += 0.01 * i as f64;
            q.log_sigma[THETA] -= 0.01 * i as f64;
            let c = inner_mode(&q, &data, None).unwrap();
            let w = inner_mode(&q, &data, warm.as_ref()).unwrap();
            cold_iters.push(c.newton_iters);
            warm_iters.push(w.newton_iters);
            warm = Some(w.mode);
        }
        cold_iters.sort();
        warm_iters.sort();
        assert!(warm_iters[7] <= cold_iters[7]);
    }

    #[test]
    fn degenerate_latents_give_the_glm() {
        let mut p = ModelParams::new(Structure::constant());
        p.mu = [1.0, 19.0, 2.5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, data) = random_poisson_toy(&mut rng, 4, 6);
        let want = crate::model::density::joint_nll_compact(&p, &[], &data).unwrap();
        assert_eq!(marginal_nll(&p, &data).unwrap(), want);
        fd_check(&p, &data, 1e-6);
    }

    #[test]
    fn within_year_order_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, data) = random_poisson_toy(&mut rng, 6, 7);
        let rev = Dataset::new(
            data.years().to_vec(),
            data.observations().iter().map(|o| o.iter().rev().copied().collect()).collect(),
        )
        .unwrap();
        let a = marginal_nll(&p, &data).unwrap();
        let b = marginal_nll(&p, &rev).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }
}
