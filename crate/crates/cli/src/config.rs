//! Experiment configuration: a TOML file with one table per concern.
//!
//! Every key has a default, so an empty file is a valid config. Unknown keys
//! and out-of-range values are rejected before any work starts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fluctsel::nuts::SamplerConfig;
use fluctsel::priors::PriorSpec;
use fluctsel::selection::N_CANDIDATES;
use fluctsel::simulate::SimDesign;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub design: DesignSection,
    pub sampler: SamplerSection,
    pub study: StudySection,
    pub data: DataSection,
    pub select: SelectSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub n_years: usize,
    pub mean_size: f64,
    pub phi_theta: f64,
    pub mu: [f64; 3],
    pub sigma_theta: f64,
    pub sigma_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub chains: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub thin: usize,
    pub adapt_delta: f64,
    pub max_treedepth: u32,
    /// Marginalize the latent states with the Laplace approximation.
    pub laplace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub replicates: usize,
    pub priors: Vec<String>,
    /// Start the optimizer at the simulation truth instead of the moment start.
    pub start_at_truth: bool,
    /// Design settings of the efficiency study; empty means `[design]` alone.
    pub settings: Vec<Setting>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub n_years: usize,
    pub mean_size: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Brood CSV; when absent, data are simulated from `[design]`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub candidates: Vec<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 1, workers: 0 }
    }
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = SimDesign::default();
        Self {
            n_years: d.n_years,
            mean_size: d.mean_size,
            phi_theta: d.phi_theta,
            mu: d.mu,
            sigma_theta: d.sigma_theta,
            sigma_z: d.sigma_z,
        }
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            chains: s.chains,
            warmup: s.warmup,
            iterations: s.total_iters,
            thin: s.thin,
            adapt_delta: s.adapt_delta,
            max_treedepth: s.max_treedepth,
            laplace: false,
        }
    }
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            replicates: 50,
            priors: vec!["prior1".into(), "prior2".into()],
            start_at_truth: false,
            settings: vec![],
        }
    }
}

impl Default for SelectSection {
    fn default() -> Self {
        Self { candidates: (1..=N_CANDIDATES).collect() }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Simulation design for a given data seed.
    pub fn sim_design(&self, seed: u64) -> SimDesign {
        SimDesign {
            n_years: self.design.n_years,
            mean_size: self.design.mean_size,
            phi_theta: self.design.phi_theta,
            mu: self.design.mu,
            sigma_theta: self.design.sigma_theta,
            sigma_z: self.design.sigma_z,
            seed,
        }
    }

    pub fn sampler_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains: self.sampler.chains,
            warmup: self.sampler.warmup,
            total_iters: self.sampler.iterations,
            thin: self.sampler.thin,
            adapt_delta: self.sampler.adapt_delta,
            max_treedepth: self.sampler.max_treedepth,
            seed,
            parallel: true,
        }
    }

    pub fn priors(&self) -> Result<Vec<(String, PriorSpec)>> {
        self.study
            .priors
            .iter()
            .map(|name| Ok((name.clone(), PriorSpec::from_name(name)?)))
            .collect()
    }

    /// Efficiency-study settings, falling back to `[design]`.
    pub fn settings(&self) -> Vec<Setting> {
        if self.study.settings.is_empty() {
            vec![Setting { n_years: self.design.n_years, mean_size: self.design.mean_size }]
        } else {
            self.study.settings.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_design(0).validate().context("[design]")?;
        for (i, s) in self.study.settings.iter().enumerate() {
            let d = SimDesign { n_years: s.n_years, mean_size: s.mean_size, ..self.sim_design(0) };
            d.validate().with_context(|| format!("[[study.settings]] entry {}", i + 1))?;
        }
        self.sampler_config(0).validate().context("[sampler]")?;
        if self.study.replicates == 0 {
            bail!("[study] replicates must be at least 1");
        }
        if self.study.priors.is_empty() {
            bail!("[study] priors must name at least one prior");
        }
        self.priors().context("[study] priors")?;
        if self.select.candidates.is_empty() {
            bail!("[select] candidates must not be empty");
        }
        if let Some(&bad) = self.select.candidates.iter().find(|&&c| c == 0 || c > N_CANDIDATES) {
            bail!("[select] candidates: no model {bad} (valid: 1 to {N_CANDIDATES})");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.sampler_config(1).retained_per_chain(), 1000);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.study.settings = vec![Setting { n_years: 10, mean_size: 20.0 }];
        cfg.data.path = Some("broods.csv".into());
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::from_toml("[sampler]\nchainz = 4\n").unwrap_err().to_string();
        assert!(err.contains("chainz"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected_with_their_section() {
        for (text, section) in [
            ("[sampler]\nwarmup = 5000\n", "[sampler]"),
            ("[design]\nmean_size = -1.0\n", "[design]"),
            ("[study]\npriors = [\"prior9\"]\n", "[study]"),
            ("[select]\ncandidates = [0]\n", "[select]"),
            ("[study]\nreplicates = 0\n", "[study]"),
        ] {
            let err = format!("{:#}", Config::from_toml(text).unwrap_err());
            assert!(err.contains(section), "{text}: {err}");
        }
    }

    #[test]
    fn wrong_type_is_reported() {
        assert!(Config::from_toml("[run]\nseed = \"one\"\n").is_err());
    }
}
