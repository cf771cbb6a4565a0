//! Symmetric block-tridiagonal matrices: Cholesky factorization, solves and
//! the selected inverse (diagonal and first off-diagonal blocks).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::covariance::cholesky;

/// `diag[t]` is block `(t, t)`; `sub[t]` is block `(t+1, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiag {
    pub k: usize,
    pub diag: Vec<DMatrix<f64>>,
    pub sub: Vec<DMatrix<f64>>,
}

impl BlockTridiag {
    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.k * self.n_blocks()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.k;
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (t, d) in self.diag.iter().enumerate() {
            m.view_mut((t * k, t * k), (k, k)).copy_from(d);
        }
        for (t, b) in self.sub.iter().enumerate() {
            m.view_mut(((t + 1) * k, t * k), (k, k)).copy_from(b);
            m.view_mut((t * k, (t + 1) * k), (k, k)).copy_from(&b.transpose());
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; x.len()];
        for t in 0..self.n_blocks() {
            let xt = DVector::from_column_slice(&x[t * k..(t + 1) * k]);
            let mut y = &self.diag[t] * &xt;
            if t > 0 {
                y += &self.sub[t - 1] * DVector::from_column_slice(&x[(t - 1) * k..t * k]);
            }
            if t + 1 < self.n_blocks() {
                y += self.sub[t].transpose() * DVector::from_column_slice(&x[(t + 1) * k..(t + 2) * k]);
            }
            out[t * k..(t + 1) * k].copy_from_slice(y.as_slice());
        }
        out
    }

    /// Adds `lambda` to every diagonal entry.
    pub fn shifted(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for d in &mut out.diag {
            for i in 0..self.k {
                d[(i, i)] += lambda;
            }
        }
        out
    }

    pub fn cholesky(&self) -> Result<BlockCholesky> {
        let n = self.n_blocks();
        let mut l = Vec::with_capacity(n);
        let mut l_inv = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n.saturating_sub(1));
        let mut schur = self.diag[0].clone();
        for t in 0..n {
            let lt = cholesky(&schur)?;
            let inv = lt
                .clone()
                .solve_lower_triangular(&DMatrix::identity(self.k, self.k))
                .ok_or(Error::NotPositiveDefinite)?;
            if t + 1 < n {
                // M_t = B_t L_t^{-T}
                let mt = &self.sub[t] * inv.transpose();
                schur = &self.diag[t + 1] - &mt * mt.transpose();
                m.push(mt);
            }
            l.push(lt);
            l_inv.push(inv);
        }
        Ok(BlockCholesky {
            k: self.k,
            l,
            l_inv,
            m,
        })
    }
}

/// `H = L Lᵀ` with `L` block lower-bidiagonal: diagonal blocks `l[t]`,
/// sub-diagonal blocks `m[t]` at `(t+1, t)`.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    pub k: usize,
    pub l: Vec<DMatrix<f64>>,
    l_inv: Vec<DMatrix<f64>>,
    pub m: Vec<DMatrix<f64>>,
}

/// Diagonal and first sub-diagonal blocks of `H⁻¹`.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    pub diag: Vec<DMatrix<f64>>,
    /// `sub[t]` is block `(t+1, t)` of the inverse.
    pub sub: Vec<DMatrix<f64>>,
}

impl BlockCholesky {
    pub fn logdet(&self) -> f64 {
        2.0 * self
            .l
            .iter()
            .flat_map(|l| (0..self.k).map(move |i| l[(i, i)].ln()))
            .sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let n = self.l.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            let mut r = DVector::from_column_slice(&b[t * k..(t + 1) * k]);
            if t > 0 {
                r -= &self.m[t - 1] * &y[t - 1];
            }
            y.push(&self.l_inv[t] * r);
        }
        let mut x = vec![DVector::zeros(k); n];
        for t in (0..n).rev() {
            let mut r = y[t].clone();
            if t + 1 < n {
                r -= self.m[t].transpose() * &x[t + 1];
            }
            x[t] = self.l_inv[t].transpose() * r;
        }
        x.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.l.len();
        let mut diag = vec![DMatrix::zeros(self.k, self.k); n];
        let mut sub = vec![DMatrix::zeros(self.k, self.k); n.saturating_sub(1)];
        diag[n - 1] = self.l_inv[n - 1].transpose() * &self.l_inv[n - 1];
        for t in (0..n.saturating_sub(1)).rev() {
            let z_next_t = -(&diag[t + 1] * &self.m[t] * &self.l_inv[t]);
            let zt = self.l_inv[t].transpose() * (&self.l_inv[t] - self.m[t].transpose() * &z_next_t);
            diag[t] = (&zt + zt.transpose()) * 0.5;
            sub[t] = z_next_t;
        }
        SelectedInverse { diag, sub }
    }
}
