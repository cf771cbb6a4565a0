//! Stationary and innovation covariances of the VAR(1) latent law.

use nalgebra::{DMatrix, Matrix3};

use super::params::{ModelParams, RHO_PAIRS};
use crate::error::{Error, Result};

/// Spectral radius margin: `Φ` is stable iff its spectral radius is below `1 − STABILITY_EPS`.
pub const STABILITY_EPS: f64 = 1e-8;
/// Smallest Cholesky pivot accepted as positive.
pub const PIVOT_TOL: f64 = 1e-10;
/// Most negative eigenvalue tolerated in a positive semidefinite matrix.
pub const PSD_TOL: f64 = 1e-10;

/// Unit-diagonal stationary correlation matrix `Γ₀` from `(ρ_αθ, ρ_αω, ρ_θω)`.
pub fn stationary_corr(rho: &[f64; 3]) -> Result<Matrix3<f64>> {
    if rho.iter().any(|r| !r.is_finite() || r.abs() >= 1.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut g = Matrix3::identity();
    for (r, &(a, b)) in RHO_PAIRS.iter().enumerate() {
        g[(a, b)] = rho[r];
        g[(b, a)] = rho[r];
    }
    cholesky(&DMatrix::from_column_slice(3, 3, g.as_slice()))?;
    Ok(g)
}

/// Innovation covariance `Σ_w = Γ₀ − Φ Γ₀ Φᵀ`.
pub fn innovation_cov(phi: &Matrix3<f64>, gamma0: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let radius = spectral_radius(phi);
    if !(radius < 1.0 - STABILITY_EPS) {
        return Err(Error::Unstable(radius));
    }
    let s = gamma0 - phi * gamma0 * phi.transpose();
    let s = (s + s.transpose()) * 0.5;
    let min_eig = s.symmetric_eigenvalues().min();
    if min_eig < -PSD_TOL {
        return Err(Error::NotPositiveSemidefinite(min_eig));
    }
    Ok(s)
}

/// Largest eigenvalue modulus of `Φ`.
pub fn spectral_radius(phi: &Matrix3<f64>) -> f64 {
    if phi.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    phi.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn phi_matrix(phi: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| phi[i][j])
}

/// Lower Cholesky factor; fails when a pivot falls below [`PIVOT_TOL`].
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d >= PIVOT_TOL) {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Inverse and log-determinant of an SPD matrix from its Cholesky factor.
pub fn spd_inverse_logdet(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let l = cholesky(a)?;
    let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n = a.nrows();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite)?;
    let inv = linv.transpose() * linv;
    Ok(((&inv + inv.transpose()) * 0.5, logdet))
}

/// The latent law restricted to the stochastic processes.
#[derive(Debug, Clone)]
pub struct ActiveCovariances {
    pub active: Vec<usize>,
    pub gamma0: DMatrix<f64>,
    pub gamma0_inv: DMatrix<f64>,
    pub logdet_gamma0: f64,
    pub phi: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_w_inv: DMatrix<f64>,
    pub logdet_sigma_w: f64,
}

impl ActiveCovariances {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let gamma0 = stationary_corr(&params.rho)?;
        let phi = phi_matrix(&params.phi);
        let sigma_w = innovation_cov(&phi, &gamma0)?;
        let active = params.structure.active();
        let k = active.len();
        let sub = |m: &Matrix3<f64>| DMatrix::from_fn(k, k, |i, j| m[(active[i], active[j])]);
        let gamma0_a = sub(&gamma0);
        let sigma_w_a = sub(&sigma_w);
        let (gamma0_inv, logdet_gamma0) = spd_inverse_logdet(&gamma0_a)?;
        let (sigma_w_inv, logdet_sigma_w) = spd_inverse_logdet(&sigma_w_a)?;
        Ok(Self {
            phi: sub(&phi),
            active,
            gamma0: gamma0_a,
            gamma0_inv,
            logdet_gamma0,
            sigma_w: sigma_w_a,
            sigma_w_inv,
            logdet_sigma_w,
        })
    }

    pub fn k(&self) -> usize {
        self.active.len()
    }
}
