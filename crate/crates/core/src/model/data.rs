use statrs::function::factorial::ln_factorial;

use super::params::ModelParams;
use crate::error::{Error, Result};

/// One breeding record: phenotype and offspring count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Phenotype in trait units (e.g. laying date in days).
    pub z: f64,
    /// Offspring count.
    pub x: u32,
}

/// Observations grouped by time point, in temporal order.
///
/// Only the order of the time points enters the model; the labels are kept
/// for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    years: Vec<i64>,
    observations: Vec<Vec<Observation>>,
    log_factorials: Vec<f64>,
}

impl Dataset {
    pub fn new(years: Vec<i64>, observations: Vec<Vec<Observation>>) -> Result<Self> {
        if years.len() != observations.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} years but {} observation groups",
                years.len(),
                observations.len()
            )));
        }
        if years.is_empty() {
            return Err(Error::InvalidData("dataset has no time points".into()));
        }
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidData(
                "time points must be strictly increasing".into(),
            ));
        }
        for (year, obs) in years.iter().zip(&observations) {
            if obs.is_empty() {
                return Err(Error::InvalidData(format!("year {year} has no observations")));
            }
            if obs.iter().any(|o| !o.z.is_finite()) {
                return Err(Error::InvalidData(format!("year {year} has a non-finite phenotype")));
            }
        }
        let log_factorials = observations
            .iter()
            .map(|obs| obs.iter().map(|o| ln_factorial(o.x as u64)).sum())
            .collect();
        Ok(Self {
            years,
            observations,
            log_factorials,
        })
    }

    /// Groups `(year, z, x)` records by year. Within-year order is preserved.
    pub fn from_records<I: IntoIterator<Item = (i64, f64, u32)>>(records: I) -> Result<Self> {
        let mut grouped: std::collections::BTreeMap<i64, Vec<Observation>> = Default::default();
        for (year, z, x) in records {
            grouped.entry(year).or_default().push(Observation { z, x });
        }
        let (years, observations) = grouped.into_iter().unzip();
        Self::new(years, observations)
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn year(&self, t: usize) -> &[Observation] {
        &self.observations[t]
    }

    pub fn observations(&self) -> &[Vec<Observation>] {
        &self.observations
    }

    /// `Σ log(x!)` over the observations of time point `t`.
    pub fn log_factorial_sum(&self, t: usize) -> f64 {
        self.log_factorials[t]
    }

    pub fn n_obs(&self) -> usize {
        self.observations.iter().map(Vec::len).sum()
    }

    /// Flat `(year, z, x)` records in storage order.
    pub fn records(&self) -> impl Iterator<Item = (i64, f64, u32)> + '_ {
        self.years
            .iter()
            .zip(&self.observations)
            .flat_map(|(&y, obs)| obs.iter().map(move |o| (y, o.z, o.x)))
    }

    /// Same observations with new labels (temporal order must be kept).
    pub fn relabel(&self, years: Vec<i64>) -> Result<Self> {
        Self::new(years, self.observations.clone())
    }
}

/// Standardized latent deviations, one row `(α_t, θ_t, ω_t)` per time point.
/// Columns of constant processes are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStates {
    pub states: Vec<[f64; 3]>,
}

impl LatentStates {
    pub fn zeros(n_years: usize) -> Self {
        Self {
            states: vec![[0.0; 3]; n_years],
        }
    }

    pub fn n_years(&self) -> usize {
        self.states.len()
    }

    /// Packs the active columns into a year-major vector.
    pub fn compact(&self, active: &[usize]) -> Vec<f64> {
        self.states
            .iter()
            .flat_map(|row| active.iter().map(move |&k| row[k]))
            .collect()
    }

    pub fn from_compact(compact: &[f64], active: &[usize], n_years: usize) -> Self {
        let k = active.len();
        let mut states = vec![[0.0; 3]; n_years];
        if k > 0 {
            for (t, row) in states.iter_mut().enumerate() {
                for (j, &a) in active.iter().enumerate() {
                    row[a] = compact[t * k + j];
                }
            }
        }
        Self { states }
    }
}

/// Yearly fitness-function parameters `η_t` in natural units.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalProcesses {
    pub eta: Vec<[f64; 3]>,
}

impl NaturalProcesses {
    /// `η_t[k] = μ_k + σ_k · s_t[k]`, with `σ_k = 0` for constant processes.
    pub fn from_states(params: &ModelParams, states: &LatentStates) -> Self {
        let sigma: [f64; 3] = std::array::from_fn(|k| params.sigma(k));
        let eta = states
            .states
            .iter()
            .map(|s| std::array::from_fn(|k| params.mu[k] + sigma[k] * s[k]))
            .collect();
        Self { eta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Structure;
    use proptest::prelude::*;

    #[test]
    fn rejects_empty_years_and_disorder() {
        let o = Observation { z: 1.0, x: 2 };
        assert!(Dataset::new(vec![1, 2], vec![vec![o], vec![]]).is_err());
        assert!(Dataset::new(vec![2, 1], vec![vec![o], vec![o]]).is_err());
        assert!(Dataset::new(vec![], vec![]).is_err());
    }

    #[test]
    fn records_group_by_year() {
        let d = Dataset::from_records([(2001, 3.0, 1), (1999, 1.0, 0), (2001, 4.0, 5)]).unwrap();
        assert_eq!(d.years(), &[1999, 2001]);
        assert_eq!(d.year(1).len(), 2);
        assert_eq!(d.n_obs(), 3);
        assert!((d.log_factorial_sum(1) - 120f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn compact_round_trip() {
        let st = LatentStates { states: vec![[0.0, 1.0, 0.0], [0.0, -2.0, 0.0]] };
        let c = st.compact(&[1]);
        assert_eq!(c, vec![1.0, -2.0]);
        assert_eq!(LatentStates::from_compact(&c, &[1], 2), st);
    }

    proptest! {
        #[test]
        fn scale_shift_multiplies_latent_effect(
            log_sigma in -2.0f64..2.0,
            log_c in -1.0f64..1.0,
            s in proptest::collection::vec(-3.0f64..3.0, 1..10),
        ) {
            let mut p = ModelParams::new(Structure::ar1_theta());
            p.mu = [1.0, 20.0, 3.0];
            p.log_sigma[1] = log_sigma;
            let states = LatentStates { states: s.iter().map(|&v| [0.0, v, 0.0]).collect() };
            let base = NaturalProcesses::from_states(&p, &states);
            p.log_sigma[1] += log_c;
            let scaled = NaturalProcesses::from_states(&p, &states);
            for (a, b) in base.eta.iter().zip(&scaled.eta) {
                let want = (a[1] - 20.0) * log_c.exp();
                prop_assert!(((b[1] - 20.0) - want).abs() <= 1e-12 * (1.0 + want.abs()));
                prop_assert_eq!(a[0], b[0]);
            }
        }
    }
}
