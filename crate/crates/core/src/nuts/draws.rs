//! Sampler output.

/// One chain's retained draws and per-iteration sampler statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain_id: usize,
    /// Retained (post-warmup, thinned) draws, one row per retained iteration.
    pub draws: Vec<Vec<f64>>,
    /// Divergence flag for every post-warmup iteration (before thinning).
    pub divergent: Vec<bool>,
    pub treedepth: Vec<u32>,
    pub energy: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub n_leapfrog: Vec<u32>,
    /// Adapted step size and inverse metric diagonal.
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    /// Sampling wall-clock seconds (warmup included, model build excluded).
    pub wall_seconds: f64,
}

impl ChainDraws {
    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    /// Draws of coordinate `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[j]).collect()
    }
}

/// Draws from all chains of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// Coordinate names, one per draw column.
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    /// Whether the chains ran concurrently (affects the efficiency clock).
    pub parallel: bool,
}

impl PosteriorDraws {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn retained_per_chain(&self) -> Vec<usize> {
        self.chains.iter().map(|c| c.draws.len()).collect()
    }

    pub fn n_retained(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn post_warmup_iterations(&self) -> usize {
        self.chains.iter().map(|c| c.divergent.len()).sum()
    }

    pub fn n_divergent(&self) -> usize {
        self.chains.iter().map(ChainDraws::n_divergent).sum()
    }

    /// Per-chain series of coordinate `j`.
    pub fn chain_columns(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.column(j)).collect()
    }

    /// All chains' draws of coordinate `j`, chain after chain.
    pub fn merged_column(&self, j: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.column(j)).collect()
    }

    /// Wall time charged to the run: the slowest chain when parallel, the sum otherwise.
    pub fn wall_seconds(&self) -> f64 {
        if self.parallel {
            self.chains.iter().map(|c| c.wall_seconds).fold(0.0, f64::max)
        } else {
            self.chains.iter().map(|c| c.wall_seconds).sum()
        }
    }
}
