use crate::error::{Error, Result};

/// Index of the log-maximum-fitness (height) process.
pub const ALPHA: usize = 0;
/// Index of the optimum process.
pub const THETA: usize = 1;
/// Index of the log-width process.
pub const OMEGA: usize = 2;

pub const PROCESS_NAMES: [&str; 3] = ["alpha", "theta", "omega"];

/// Process pairs addressed by the three stationary correlations.
pub const RHO_PAIRS: [(usize, usize); 3] = [(ALPHA, THETA), (ALPHA, OMEGA), (THETA, OMEGA)];

/// Which parts of the model are estimated and which are pinned.
///
/// A process that is not `stochastic` has its scale fixed at `log σ = −∞`:
/// its latent column is dropped and the process equals its mean every year.
/// Pinned transition entries and correlations are held at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Structure {
    pub stochastic: [bool; 3],
    /// `phi_free[i][j]` frees `Φ[i][j]`, the effect of process `j` at `t−1` on process `i` at `t`.
    pub phi_free: [[bool; 3]; 3],
    pub rho_free: [bool; 3],
}

impl Structure {
    /// All three processes constant: a Poisson GLM with a Gaussian fitness curve.
    pub fn constant() -> Self {
        Self {
            stochastic: [false; 3],
            phi_free: [[false; 3]; 3],
            rho_free: [false; 3],
        }
    }

    /// AR(1) optimum with constant height and width (the simulation design).
    pub fn ar1_theta() -> Self {
        let mut s = Self::constant();
        s.stochastic[THETA] = true;
        s.phi_free[THETA][THETA] = true;
        s
    }

    /// Indices of the stochastic processes, in order.
    pub fn active(&self) -> Vec<usize> {
        (0..3).filter(|&k| self.stochastic[k]).collect()
    }

    pub fn n_active(&self) -> usize {
        self.stochastic.iter().filter(|&&b| b).count()
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                if self.phi_free[i][j] && !(self.stochastic[i] && self.stochastic[j]) {
                    return Err(Error::InvalidConfig(format!(
                        "phi_{}_{} is free but a process it links is constant",
                        PROCESS_NAMES[i], PROCESS_NAMES[j]
                    )));
                }
            }
        }
        for (r, &(a, b)) in RHO_PAIRS.iter().enumerate() {
            if self.rho_free[r] && !(self.stochastic[a] && self.stochastic[b]) {
                return Err(Error::InvalidConfig(format!(
                    "rho_{}_{} is free but a process it links is constant",
                    PROCESS_NAMES[a], PROCESS_NAMES[b]
                )));
            }
        }
        Ok(())
    }

    /// Free fixed-effect coordinates, in canonical order.
    pub fn coords(&self) -> Vec<Coord> {
        let mut out: Vec<Coord> = (0..3).map(Coord::Mu).collect();
        for i in 0..3 {
            for j in 0..3 {
                if self.phi_free[i][j] {
                    out.push(Coord::Phi(i, j));
                }
            }
        }
        for k in 0..3 {
            if self.stochastic[k] {
                out.push(Coord::LogSigma(k));
            }
        }
        for r in 0..3 {
            if self.rho_free[r] {
                out.push(Coord::Rho(r));
            }
        }
        out
    }

    pub fn n_free(&self) -> usize {
        3 + self.phi_free.iter().flatten().filter(|&&b| b).count()
            + self.n_active()
            + self.rho_free.iter().filter(|&&b| b).count()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.coords().iter().map(Coord::name).collect()
    }
}

/// One free fixed-effect coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coord {
    Mu(usize),
    Phi(usize, usize),
    LogSigma(usize),
    Rho(usize),
}

impl Coord {
    pub fn name(&self) -> String {
        match *self {
            Coord::Mu(k) => format!("mu_{}", PROCESS_NAMES[k]),
            Coord::Phi(i, j) => format!("phi_{}_{}", PROCESS_NAMES[i], PROCESS_NAMES[j]),
            Coord::LogSigma(k) => format!("log_sigma_{}", PROCESS_NAMES[k]),
            Coord::Rho(r) => {
                let (a, b) = RHO_PAIRS[r];
                format!("rho_{}_{}", PROCESS_NAMES[a], PROCESS_NAMES[b])
            }
        }
    }

    /// Coordinates bounded to (−1, 1) in their natural scale.
    pub fn is_bounded(&self) -> bool {
        matches!(self, Coord::Phi(..) | Coord::Rho(_))
    }
}

/// Fixed effects of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Process means `(μ_α, μ_θ, μ_ω)`.
    pub mu: [f64; 3],
    /// VAR(1) transition matrix, `phi[i][j]` = effect of `j` at `t−1` on `i` at `t`.
    pub phi: [[f64; 3]; 3],
    /// Stationary correlations `(ρ_αθ, ρ_αω, ρ_θω)`.
    pub rho: [f64; 3],
    /// Log process scales; `−∞` for constant processes.
    pub log_sigma: [f64; 3],
    pub structure: Structure,
}

impl ModelParams {
    /// Zero means, zero transition and correlations, unit scales for the
    /// stochastic processes.
    pub fn new(structure: Structure) -> Self {
        let mut log_sigma = [f64::NEG_INFINITY; 3];
        for k in structure.active() {
            log_sigma[k] = 0.0;
        }
        Self {
            mu: [0.0; 3],
            phi: [[0.0; 3]; 3],
            rho: [0.0; 3],
            log_sigma,
            structure,
        }
    }

    pub fn sigma(&self, k: usize) -> f64 {
        if self.structure.stochastic[k] {
            self.log_sigma[k].exp()
        } else {
            0.0
        }
    }

    pub fn get(&self, c: Coord) -> f64 {
        match c {
            Coord::Mu(k) => self.mu[k],
            Coord::Phi(i, j) => self.phi[i][j],
            Coord::LogSigma(k) => self.log_sigma[k],
            Coord::Rho(r) => self.rho[r],
        }
    }

    pub fn set(&mut self, c: Coord, v: f64) {
        match c {
            Coord::Mu(k) => self.mu[k] = v,
            Coord::Phi(i, j) => self.phi[i][j] = v,
            Coord::LogSigma(k) => self.log_sigma[k] = v,
            Coord::Rho(r) => self.rho[r] = v,
        }
    }

    /// Values of the free coordinates in natural scale.
    pub fn free_values(&self) -> Vec<f64> {
        self.structure.coords().into_iter().map(|c| self.get(c)).collect()
    }

    pub fn with_free_values(&self, values: &[f64]) -> Result<Self> {
        let coords = self.structure.coords();
        if values.len() != coords.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} free values, got {}",
                coords.len(),
                values.len()
            )));
        }
        let mut out = self.clone();
        for (c, &v) in coords.into_iter().zip(values) {
            out.set(c, v);
        }
        Ok(out)
    }

    /// Re-expresses these parameters under a different structure: entries the
    /// new structure pins are zeroed, newly stochastic processes get `log σ = 0`.
    pub fn restructure(&self, structure: Structure) -> Self {
        let mut out = ModelParams::new(structure);
        out.mu = self.mu;
        for i in 0..3 {
            for j in 0..3 {
                if structure.phi_free[i][j] {
                    out.phi[i][j] = self.phi[i][j];
                }
            }
        }
        for r in 0..3 {
            if structure.rho_free[r] {
                out.rho[r] = self.rho[r];
            }
        }
        for k in structure.active() {
            if self.structure.stochastic[k] {
                out.log_sigma[k] = self.log_sigma[k];
            }
        }
        out
    }

    /// Checks structure consistency and the stationarity invariants.
    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        for k in 0..3 {
            if self.structure.stochastic[k] && !self.log_sigma[k].is_finite() {
                return Err(Error::NonFiniteValue);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                if !self.structure.phi_free[i][j] && self.phi[i][j] != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "pinned transition entry ({i},{j}) is nonzero"
                    )));
                }
            }
        }
        for r in 0..3 {
            if !self.structure.rho_free[r] && self.rho[r] != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "pinned correlation {r} is nonzero"
                )));
            }
        }
        super::covariance::ActiveCovariances::new(self).map(|_| ())
    }
}
