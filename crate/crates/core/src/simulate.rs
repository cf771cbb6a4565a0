//! Synthetic datasets: the AR(1)-optimum simulation design and general
//! simulation from any parameter set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::covariance::{cholesky, ActiveCovariances};
use crate::model::data::{Dataset, LatentStates, Observation};
use crate::model::emission::log_fitness;
use crate::model::params::{ModelParams, Structure, ALPHA, THETA};
use crate::seeds::{stream, Purpose};

/// Simulation design with a stochastic AR(1) optimum and constant height and width.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub n_years: usize,
    /// Mean number of individuals per year.
    pub mean_size: f64,
    pub phi_theta: f64,
    pub mu: [f64; 3],
    pub sigma_theta: f64,
    /// Phenotype standard deviation.
    pub sigma_z: f64,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            n_years: 50,
            mean_size: 100.0,
            phi_theta: 0.4,
            mu: [2.0, 20.0, 3.5],
            sigma_theta: 20.0,
            sigma_z: 20.0,
            seed: 1,
        }
    }
}

impl SimDesign {
    pub fn params(&self) -> ModelParams {
        let mut p = ModelParams::new(Structure::ar1_theta());
        p.mu = self.mu;
        p.phi[THETA][THETA] = self.phi_theta;
        p.log_sigma[THETA] = self.sigma_theta.ln();
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_years == 0 || !(self.mean_size > 0.0) || !(self.sigma_z >= 0.0) || !(self.sigma_theta > 0.0) {
            return Err(Error::InvalidConfig("design needs years, a positive mean size and positive scales".into()));
        }
        self.params().validate()
    }
}

/// `S = σ_z² / (e^{2μ_ω} + σ_z²)`.
pub fn selection_strength(design: &SimDesign) -> f64 {
    let s2 = design.sigma_z * design.sigma_z;
    s2 / ((2.0 * design.mu[2]).exp() + s2)
}

/// How many individuals a year gets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeLaw {
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

impl SizeLaw {
    pub fn poisson(mean: f64) -> Self {
        Self { mean, min: 1, max: u64::MAX }
    }

    /// Poisson draw, redrawn while zero, then clamped to `[min, max]`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        let law = Poisson::new(self.mean).expect("positive mean");
        loop {
            let n = law.sample(rng) as u64;
            if n > 0 {
                return n.clamp(self.min, self.max);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub states: LatentStates,
    /// Standardized innovations `ε_t` with `s_1 = L_Γ ε_1`, `s_t = Φ s_{t−1} + L_w ε_t`
    /// (`L` lower Cholesky factors), full 3-vectors with zeros for constant processes.
    pub innovations: Vec<[f64; 3]>,
}

/// Draws a latent path and data from `params`. Phenotypes are
/// `N(z_mean, z_sd²)` every year; years are labelled `first_year, first_year+1, …`.
pub fn simulate_from_params(
    params: &ModelParams,
    n_years: usize,
    sizes: SizeLaw,
    z_mean: f64,
    z_sd: f64,
    first_year: i64,
    seed: u64,
) -> Result<Simulated> {
    params.validate()?;
    let cov = ActiveCovariances::new(params)?;
    let k = cov.k();
    let lg = cholesky(&cov.gamma0)?;
    let lw = if n_years > 1 && k > 0 {
        // innovation covariance may be singular only in degenerate designs
        cholesky(&cov.sigma_w)?
    } else {
        DMatrix::zeros(k, k)
    };
    let mut rng = stream(seed, Purpose::Latent, 0);
    let mut s = DVector::zeros(k);
    let mut states = Vec::with_capacity(n_years);
    let mut innovations = Vec::with_capacity(n_years);
    for t in 0..n_years {
        let e = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        s = if t == 0 { &lg * &e } else { &cov.phi * &s + &lw * &e };
        let mut row = [0.0; 3];
        let mut erow = [0.0; 3];
        for (j, &a) in cov.active.iter().enumerate() {
            row[a] = s[j];
            erow[a] = e[j];
        }
        states.push(row);
        innovations.push(erow);
    }
    let phen = Normal::new(z_mean, z_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut observations = Vec::with_capacity(n_years);
    for (t, row) in states.iter().enumerate() {
        let mut rng = stream(seed, Purpose::Data, t as u64);
        let eta: [f64; 3] = std::array::from_fn(|a| params.mu[a] + params.sigma(a) * row[a]);
        let n = sizes.draw(&mut rng);
        let obs = (0..n)
            .map(|_| {
                let z = phen.sample(&mut rng);
                let w = log_fitness(&eta, z).exp();
                let x = if w > 0.0 { Poisson::new(w).unwrap().sample(&mut rng) as u32 } else { 0 };
                Observation { z, x }
            })
            .collect();
        observations.push(obs);
    }
    let years = (0..n_years as i64).map(|t| first_year + t).collect();
    Ok(Simulated {
        data: Dataset::new(years, observations)?,
        states: LatentStates { states },
        innovations,
    })
}

/// Dataset and ground-truth latents under `design`.
pub fn simulate_dataset(design: &SimDesign) -> Result<(Dataset, LatentStates)> {
    design.validate()?;
    let sim = simulate_from_params(
        &design.params(),
        design.n_years,
        SizeLaw::poisson(design.mean_size),
        design.mu[THETA],
        design.sigma_z,
        1,
        design.seed,
    )?;
    Ok((sim.data, sim.states))
}

/// The selected real-data structure: AR(1) height and optimum with correlated
/// innovations, constant width.
pub fn ar1_alpha_theta() -> Structure {
    let mut s = Structure::constant();
    s.stochastic[ALPHA] = true;
    s.stochastic[THETA] = true;
    s.phi_free[ALPHA][ALPHA] = true;
    s.phi_free[THETA][THETA] = true;
    s.rho_free[0] = true;
    s
}

/// Published estimates for the real-data model, used to generate the stand-in dataset.
pub fn standin_params() -> ModelParams {
    let mut p = ModelParams::new(ar1_alpha_theta());
    p.mu = [2.0, 18.5, 3.88];
    p.phi[ALPHA][ALPHA] = 0.379;
    p.phi[THETA][THETA] = 0.48;
    p.log_sigma[ALPHA] = -1.72;
    p.log_sigma[THETA] = 3.07;
    p.rho[0] = -0.728;
    p
}

pub const STANDIN_FIRST_YEAR: i64 = 1955;
pub const STANDIN_YEARS: usize = 61;
pub const STANDIN_SIZES: SizeLaw = SizeLaw { mean: 81.0, min: 10, max: 164 };
/// Laying-date spread of the stand-in (days).
pub const STANDIN_Z_SD: f64 = 10.0;

/// Synthetic stand-in for the unavailable field dataset: 61 years from 1955,
/// about 81 broods a year (between 10 and 164), laying dates around day 18.5.
pub fn standin_dataset(seed: u64) -> Result<Simulated> {
    let p = standin_params();
    simulate_from_params(&p, STANDIN_YEARS, STANDIN_SIZES, p.mu[THETA], STANDIN_Z_SD, STANDIN_FIRST_YEAR, seed)
}
