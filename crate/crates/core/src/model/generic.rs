//! The joint density written once against [`Real`], so the AD tape can
//! differentiate it. This is the reference route the analytic gradients in
//! `density` are checked against.

use super::emission::Emission;
use super::params::{Coord, ModelParams, RHO_PAIRS};
use crate::autodiff::{Real, ScalarFn};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower Cholesky factor of a small dense matrix (no pivot checks).
fn cholesky<S: Real>(a: &[Vec<S>]) -> Vec<Vec<S>> {
    let n = a.len();
    let mut l = vec![vec![S::from_f64(0.0); n]; n];
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d = d - l[j][k].square();
        }
        let d = d.sqrt();
        l[j][j] = d;
        for i in (j + 1)..n {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            l[i][j] = s / d;
        }
    }
    l
}

/// `½ eᵀ A⁻¹ e` given the Cholesky factor of `A`.
fn half_quad<S: Real>(l: &[Vec<S>], e: &[S]) -> S {
    let n = e.len();
    let mut y: Vec<S> = Vec::with_capacity(n);
    let mut acc = S::from_f64(0.0);
    for i in 0..n {
        let mut v = e[i];
        for k in 0..i {
            v = v - l[i][k] * y[k];
        }
        let v = v / l[i][i];
        acc = acc + v.square();
        y.push(v);
    }
    acc * S::from_f64(0.5)
}

fn half_logdet<S: Real>(l: &[Vec<S>]) -> S {
    let mut acc = S::from_f64(0.0);
    for (i, row) in l.iter().enumerate() {
        acc = acc + row[i].ln();
    }
    acc
}

/// Joint negative log-density as a function of `(free fixed effects, compact latents)`.
///
/// Fixed effects are in natural coordinates, in the structure's canonical order.
pub struct JointDensityFn<'a, E> {
    pub template: ModelParams,
    pub data: &'a E,
}

impl<'a, E: Emission> JointDensityFn<'a, E> {
    pub fn new(template: &ModelParams, data: &'a E) -> Self {
        Self {
            template: template.clone(),
            data,
        }
    }

    /// Concatenated input vector for `params` and compact latents `s`.
    pub fn pack(params: &ModelParams, s: &[f64]) -> Vec<f64> {
        let mut x = params.free_values();
        x.extend_from_slice(s);
        x
    }
}

impl<E: Emission> ScalarFn for JointDensityFn<'_, E> {
    fn eval<S: Real>(&self, x: &[S]) -> S {
        let st = &self.template.structure;
        let c = S::from_f64;
        let zero = c(0.0);
        let mut mu = self.template.mu.map(c);
        let mut phi = [[zero; 3]; 3];
        let mut rho = [zero; 3];
        let mut log_sigma = [zero; 3];
        let coords = st.coords();
        for (i, coord) in coords.iter().enumerate() {
            match *coord {
                Coord::Mu(a) => mu[a] = x[i],
                Coord::Phi(a, b) => phi[a][b] = x[i],
                Coord::LogSigma(a) => log_sigma[a] = x[i],
                Coord::Rho(r) => rho[r] = x[i],
            }
        }
        let s = &x[coords.len()..];
        let active = st.active();
        let k = active.len();
        let n_years = self.data.n_years();

        let mut acc = zero;
        if k > 0 {
            let mut gamma = vec![vec![zero; k]; k];
            for i in 0..k {
                gamma[i][i] = c(1.0);
            }
            for (r, &(a, b)) in RHO_PAIRS.iter().enumerate() {
                let (Some(i), Some(j)) = (
                    active.iter().position(|&q| q == a),
                    active.iter().position(|&q| q == b),
                ) else {
                    continue;
                };
                gamma[i][j] = rho[r];
                gamma[j][i] = rho[r];
            }
            let ph: Vec<Vec<S>> = (0..k)
                .map(|i| (0..k).map(|j| phi[active[i]][active[j]]).collect())
                .collect();
            // Σ_w = Γ₀ − Φ Γ₀ Φᵀ
            let mut pg = vec![vec![zero; k]; k];
            for i in 0..k {
                for j in 0..k {
                    for m in 0..k {
                        pg[i][j] = pg[i][j] + ph[i][m] * gamma[m][j];
                    }
                }
            }
            let mut sw = gamma.clone();
            for i in 0..k {
                for j in 0..k {
                    for m in 0..k {
                        sw[i][j] = sw[i][j] - pg[i][m] * ph[j][m];
                    }
                }
            }
            let lg = cholesky(&gamma);
            let lw = cholesky(&sw);
            acc = acc + half_quad(&lg, &s[..k]) + half_logdet(&lg);
            for t in 1..n_years {
                let prev = &s[(t - 1) * k..t * k];
                let e: Vec<S> = (0..k)
                    .map(|i| {
                        let mut v = s[t * k + i];
                        for j in 0..k {
                            v = v - ph[i][j] * prev[j];
                        }
                        v
                    })
                    .collect();
                acc = acc + half_quad(&lw, &e) + half_logdet(&lw);
            }
            acc = acc + c(0.5 * (n_years * k) as f64 * LN_2PI);
        }
        let sigma: Vec<S> = active.iter().map(|&a| log_sigma[a].exp()).collect();
        for t in 0..n_years {
            let mut eta = mu;
            for (j, &a) in active.iter().enumerate() {
                eta[a] = eta[a] + sigma[j] * s[t * k + j];
            }
            acc = acc + self.data.year_nll(t, &eta);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient;
    use crate::model::data::{Dataset, Observation};
    use crate::model::density::{joint_nll_compact, joint_nll_gradient};
    use crate::model::params::{Structure, ALPHA, THETA};

    #[test]
    fn tape_gradient_agrees_with_analytic_route() {
        let mut st = Structure::ar1_theta();
        st.stochastic[ALPHA] = true;
        st.phi_free[ALPHA][ALPHA] = true;
        st.phi_free[ALPHA][THETA] = true;
        st.rho_free[0] = true;
        let mut p = ModelParams::new(st);
        p.mu = [1.5, 20.0, 2.5];
        p.phi[ALPHA][ALPHA] = 0.4;
        p.phi[ALPHA][THETA] = 0.2;
        p.phi[THETA][THETA] = -0.3;
        p.rho[0] = 0.35;
        p.log_sigma = [-0.5, 1.0, f64::NEG_INFINITY];
        let data = Dataset::new(
            vec![1, 2, 3],
            vec![
                vec![Observation { z: 18.0, x: 3 }, Observation { z: 24.0, x: 8 }],
                vec![Observation { z: 20.0, x: 5 }],
                vec![Observation { z: 12.0, x: 1 }],
            ],
        )
        .unwrap();
        let s = [0.2, -0.1, 0.5, 0.3, -0.9, 1.1];
        let f = JointDensityFn::new(&p, &data);
        let x = JointDensityFn::<Dataset>::pack(&p, &s);
        let (v, g) = gradient(&f, &x).unwrap();
        let want = joint_nll_compact(&p, &s, &data).unwrap();
        assert!((v - want).abs() < 1e-10 * want.abs());
        let an = joint_nll_gradient(&p, &s, &data).unwrap();
        let nf = an.fixed.len();
        for i in 0..nf {
            assert!((g[i] - an.fixed[i]).abs() < 1e-9 * (1.0 + g[i].abs()), "fixed {i}");
        }
        for i in 0..s.len() {
            assert!((g[nf + i] - an.latent[i]).abs() < 1e-9 * (1.0 + g[nf + i].abs()));
        }
    }
}
