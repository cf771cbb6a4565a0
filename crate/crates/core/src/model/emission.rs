//! Observation models: per-year negative log-likelihood as a function of the
//! natural process values `η_t = (η_α, η_θ, η_ω)`.

use super::data::Dataset;
use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Value and derivatives (up to third order) of one year's negative
/// log-likelihood with respect to `η_t`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct YearTerms {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
    pub third: [[[f64; 3]; 3]; 3],
}

/// An observation model whose years are conditionally independent given `η_t`.
pub trait Emission: Sync {
    fn n_years(&self) -> usize;

    /// Negative log-likelihood of year `t`. `order` selects how many
    /// derivative levels are filled (0 = value only, up to 3).
    fn year_terms(&self, t: usize, eta: &[f64; 3], order: usize) -> YearTerms;

    /// Same value as [`Emission::year_terms`], written against [`Real`] for the AD route.
    fn year_nll<S: Real>(&self, t: usize, eta: &[S; 3]) -> S;

    /// Data-moment starting values for the process means.
    fn moment_init(&self) -> [f64; 3];
}

/// `log w = η_α − (z − η_θ)² / (2 e^{2η_ω})`.
pub fn log_fitness(eta: &[f64; 3], z: f64) -> f64 {
    let d = z - eta[1];
    eta[0] - d * d * (-2.0 * eta[2]).exp() / 2.0
}

fn log_fitness_generic<S: Real>(eta: &[S; 3], z: f64) -> S {
    let d = S::from_f64(z) - eta[1];
    eta[0] - d.square() * (eta[2] * S::from_f64(-2.0)).exp() * S::from_f64(0.5)
}

impl Emission for Dataset {
    fn n_years(&self) -> usize {
        Dataset::n_years(self)
    }

    fn year_terms(&self, t: usize, eta: &[f64; 3], order: usize) -> YearTerms {
        let mut out = YearTerms {
            value: self.log_factorial_sum(t),
            ..Default::default()
        };
        let v = (-2.0 * eta[2]).exp();
        for o in self.year(t) {
            let d = o.z - eta[1];
            let dv = d * v;
            let d2v = d * dv;
            let l = eta[0] - d2v / 2.0;
            let w = l.exp();
            let x = o.x as f64;
            out.value += w - x * l;
            if order == 0 {
                continue;
            }
            let r = w - x;
            let l1 = [1.0, dv, d2v];
            for j in 0..3 {
                out.grad[j] += r * l1[j];
            }
            if order == 1 {
                continue;
            }
            // second derivatives of log w; the α row vanishes
            let mut l2 = [[0.0; 3]; 3];
            l2[1][1] = -v;
            l2[1][2] = -2.0 * dv;
            l2[2][1] = -2.0 * dv;
            l2[2][2] = -2.0 * d2v;
            for j in 0..3 {
                for k in 0..3 {
                    out.hess[j][k] += w * l1[j] * l1[k] + r * l2[j][k];
                }
            }
            if order == 2 {
                continue;
            }
            let l3 = |a: usize, b: usize, c: usize| -> f64 {
                let nb = (a == 1) as u8 + (b == 1) as u8 + (c == 1) as u8;
                let nc = (a == 2) as u8 + (b == 2) as u8 + (c == 2) as u8;
                match (nb, nc) {
                    (2, 1) => 2.0 * v,
                    (1, 2) => 4.0 * dv,
                    (0, 3) => 4.0 * d2v,
                    _ => 0.0,
                }
            };
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        out.third[a][b][c] += w * l1[a] * l1[b] * l1[c]
                            + w * (l2[a][b] * l1[c] + l2[a][c] * l1[b] + l2[b][c] * l1[a])
                            + r * l3(a, b, c);
                    }
                }
            }
        }
        out
    }

    fn year_nll<S: Real>(&self, t: usize, eta: &[S; 3]) -> S {
        let mut acc = S::from_f64(self.log_factorial_sum(t));
        for o in self.year(t) {
            let l = log_fitness_generic(eta, o.z);
            acc = acc + l.exp() - l * S::from_f64(o.x as f64);
        }
        acc
    }

    fn moment_init(&self) -> [f64; 3] {
        let (mut n, mut sx, mut sxz, mut sz, mut szz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for obs in self.observations() {
            for o in obs {
                let x = o.x as f64;
                n += 1.0;
                sx += x;
                sxz += x * o.z;
                sz += o.z;
                szz += o.z * o.z;
            }
        }
        let mean_x = (sx / n).max(0.5 / n);
        let mean_z = sz / n;
        let theta = if sx > 0.0 { sxz / sx } else { mean_z };
        let var_z = if n > 1.0 {
            (szz - n * mean_z * mean_z) / (n - 1.0)
        } else {
            1.0
        };
        [mean_x.ln(), theta, 0.5 * var_z.max(1e-6).ln()]
    }
}

/// Gaussian test hook: `y ~ N(η_α + u η_θ + u² η_ω, sd²)` with `u` a fixed
/// covariate. The likelihood is quadratic in `η`, so the Laplace
/// approximation is exact and a Kalman filter gives the reference answer.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmission {
    /// Per year, `(u, y)` pairs.
    pub years: Vec<Vec<(f64, f64)>>,
    pub sd: f64,
}

impl GaussianEmission {
    pub fn new(years: Vec<Vec<(f64, f64)>>, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidData("observation sd must be positive".into()));
        }
        if years.is_empty() || years.iter().any(Vec::is_empty) {
            return Err(Error::InvalidData("every year needs an observation".into()));
        }
        Ok(Self { years, sd })
    }

    pub fn design_row(u: f64) -> [f64; 3] {
        [1.0, u, u * u]
    }
}

impl Emission for GaussianEmission {
    fn n_years(&self) -> usize {
        self.years.len()
    }

    fn year_terms(&self, t: usize, eta: &[f64; 3], order: usize) -> YearTerms {
        let prec = 1.0 / (self.sd * self.sd);
        let norm = 0.5 * (2.0 * std::f64::consts::PI * self.sd * self.sd).ln();
        let mut out = YearTerms::default();
        for &(u, y) in &self.years[t] {
            let h = Self::design_row(u);
            let r = h[0] * eta[0] + h[1] * eta[1] + h[2] * eta[2] - y;
            out.value += 0.5 * r * r * prec + norm;
            if order >= 1 {
                for j in 0..3 {
                    out.grad[j] += r * prec * h[j];
                }
            }
            if order >= 2 {
                for j in 0..3 {
                    for k in 0..3 {
                        out.hess[j][k] += prec * h[j] * h[k];
                    }
                }
            }
        }
        out
    }

    fn year_nll<S: Real>(&self, t: usize, eta: &[S; 3]) -> S {
        let prec = 1.0 / (self.sd * self.sd);
        let norm = 0.5 * (2.0 * std::f64::consts::PI * self.sd * self.sd).ln();
        let mut acc = S::from_f64(0.0);
        for &(u, y) in &self.years[t] {
            let h = Self::design_row(u);
            let r = eta[0] * S::from_f64(h[0]) + eta[1] * S::from_f64(h[1])
                + eta[2] * S::from_f64(h[2])
                - S::from_f64(y);
            acc = acc + r.square() * S::from_f64(0.5 * prec) + S::from_f64(norm);
        }
        acc
    }

    fn moment_init(&self) -> [f64; 3] {
        // pooled least squares on (1, u, u²)
        let mut xtx = nalgebra::Matrix3::<f64>::zeros();
        let mut xty = nalgebra::Vector3::<f64>::zeros();
        for &(u, y) in self.years.iter().flatten() {
            let h = nalgebra::Vector3::from(Self::design_row(u));
            xtx += h * h.transpose();
            xty += h * y;
        }
        xtx += nalgebra::Matrix3::identity() * 1e-9;
        match xtx.cholesky() {
            Some(c) => {
                let b = c.solve(&xty);
                [b[0], b[1], b[2]]
            }
            None => [0.0; 3],
        }
    }
}
