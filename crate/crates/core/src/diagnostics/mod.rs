//! Post-sampling diagnostics and figure-data exports.

mod ess;
mod export;

pub use ess::{ess, ess_raw, rank_normalize, split_chains, split_rhat, MIN_CHAINS, MIN_DRAWS};
pub use export::{kde_grid, la_check_export, ContourGrid, LaCheckExport, ParamComparison, QqSeries, TaggedRow, Technique, GRID_POINTS};

use crate::nuts::PosteriorDraws;

/// Default run-exclusion threshold on the divergence fraction.
pub const DIVERGENCE_THRESHOLD: f64 = 0.001;

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF. Sorts in place.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub(crate) fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// NaN when the estimator is undefined (too few draws, zero variance).
    pub ess: f64,
    pub rhat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub params: Vec<ParamSummary>,
    pub min_ess: f64,
    pub divergences: usize,
    pub post_warmup_iterations: usize,
    pub divergence_fraction: f64,
    pub parallel: bool,
    /// Wall seconds charged to the run (max over chains if parallel, else the sum).
    pub wall_seconds: f64,
    pub chain_wall_seconds: Vec<f64>,
    pub efficiency: f64,
}

impl Summary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn max_rhat(&self) -> f64 {
        self.params.iter().map(|p| p.rhat).filter(|r| r.is_finite()).fold(f64::NAN, f64::max)
    }
}

/// Merged-chain summaries plus run-level divergence and efficiency figures.
pub fn summarize(draws: &PosteriorDraws) -> Summary {
    let params: Vec<ParamSummary> = draws
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let chains = draws.chain_columns(j);
            let mut merged: Vec<f64> = chains.iter().flatten().copied().collect();
            let (mean, sd) = mean_sd(&merged);
            merged.sort_by(f64::total_cmp);
            ParamSummary {
                name: name.clone(),
                mean,
                sd,
                q025: quantile_sorted(&merged, 0.025),
                q50: quantile_sorted(&merged, 0.5),
                q975: quantile_sorted(&merged, 0.975),
                ess: ess(&chains).unwrap_or(f64::NAN),
                rhat: split_rhat(&chains).unwrap_or(f64::NAN),
            }
        })
        .collect();
    let min_ess = params.iter().map(|p| p.ess).filter(|e| e.is_finite()).fold(f64::NAN, f64::min);
    let divergences = draws.n_divergent();
    let post_warmup_iterations = draws.post_warmup_iterations();
    let divergence_fraction = if post_warmup_iterations == 0 { 0.0 } else { divergences as f64 / post_warmup_iterations as f64 };
    let wall_seconds = draws.wall_seconds();
    Summary {
        params,
        min_ess,
        divergences,
        post_warmup_iterations,
        divergence_fraction,
        parallel: draws.parallel,
        wall_seconds,
        chain_wall_seconds: draws.chains.iter().map(|c| c.wall_seconds).collect(),
        efficiency: min_ess / wall_seconds,
    }
}

/// Splits runs into (kept, excluded) indices; a run is excluded when its
/// divergence fraction is at or above `threshold`.
pub fn divergence_filter(runs: &[Summary], threshold: f64) -> (Vec<usize>, Vec<usize>) {
    (0..runs.len()).partition(|&i| !excluded(runs[i].divergences, runs[i].post_warmup_iterations, threshold))
}

/// Exclusion rule on raw counts, compared without dividing.
pub fn excluded(divergences: usize, iterations: usize, threshold: f64) -> bool {
    divergences as f64 >= threshold * iterations as f64 * (1.0 - 1e-12)
}
