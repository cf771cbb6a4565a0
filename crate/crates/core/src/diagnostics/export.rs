//! Laplace-accuracy comparison data: tagged draws, QQ pairs and density contours.

use rand::seq::SliceRandom;

use super::{mean_sd, quantile_sorted};
use crate::error::{Error, Result};
use crate::nuts::PosteriorDraws;
use crate::seeds::{stream, Purpose};

pub const GRID_POINTS: usize = 64;
/// Grid margin beyond the data, in bandwidths.
const GRID_MARGIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Technique {
    Full,
    Marginalized,
}

impl Technique {
    pub fn label(self) -> &'static str {
        match self {
            Technique::Full => "full",
            Technique::Marginalized => "laplace",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedRow {
    pub technique: Technique,
    pub chain: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamComparison {
    pub name: String,
    pub mean_full: f64,
    pub mean_marginalized: f64,
    pub sd_full: f64,
    pub sd_marginalized: f64,
}

impl ParamComparison {
    /// Mean difference in units of the full-latent posterior sd.
    pub fn standardized_difference(&self) -> f64 {
        (self.mean_marginalized - self.mean_full).abs() / self.sd_full
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QqSeries {
    pub name: String,
    /// (full quantile, marginalized quantile) pairs.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub x_name: String,
    pub y_name: String,
    pub technique: Technique,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// density[i][j] at (xs[i], ys[j]).
    pub density: Vec<Vec<f64>>,
}

impl ContourGrid {
    /// Trapezoid-rule integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        let w = |v: &[f64], i: usize| {
            let left = if i > 0 { v[i] - v[i - 1] } else { 0.0 };
            let right = if i + 1 < v.len() { v[i + 1] - v[i] } else { 0.0 };
            (left + right) / 2.0
        };
        let mut total = 0.0;
        for i in 0..self.xs.len() {
            for j in 0..self.ys.len() {
                total += w(&self.xs, i) * w(&self.ys, j) * self.density[i][j];
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaCheckExport {
    pub names: Vec<String>,
    /// Rows of both runs in shuffled order.
    pub rows: Vec<TaggedRow>,
    pub params: Vec<ParamComparison>,
    pub qq: Vec<QqSeries>,
    pub contours: Vec<ContourGrid>,
}

fn scott(x: &[f64]) -> f64 {
    let (_, sd) = mean_sd(x);
    let h = sd * (x.len() as f64).powf(-1.0 / 6.0);
    if h > 0.0 {
        h
    } else {
        1e-8
    }
}

fn axis(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).collect()
}

fn kernel_matrix(data: &[f64], nodes: &[f64], h: f64) -> Vec<Vec<f64>> {
    let c = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    data.iter().map(|&d| nodes.iter().map(|&g| c * (-0.5 * ((g - d) / h).powi(2)).exp()).collect()).collect()
}

/// Product-Gaussian kernel density of (x, y) on the given axes, with Scott bandwidths.
pub fn kde_grid(x: &[f64], y: &[f64], xs: &[f64], ys: &[f64]) -> Vec<Vec<f64>> {
    let kx = kernel_matrix(x, xs, scott(x));
    let ky = kernel_matrix(y, ys, scott(y));
    let n = x.len() as f64;
    let mut out = vec![vec![0.0; ys.len()]; xs.len()];
    for (rx, ry) in kx.iter().zip(&ky) {
        for (i, &a) in rx.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in ry.iter().enumerate() {
                out[i][j] += a * b;
            }
        }
    }
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    out
}

fn shared_axis(a: &[f64], b: &[f64]) -> Vec<f64> {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let h = scott(a).max(scott(b));
    axis(lo - GRID_MARGIN * h, hi + GRID_MARGIN * h)
}

/// Builds the comparison data for two runs over the same coordinates.
pub fn la_check_export(full: &PosteriorDraws, marginalized: &PosteriorDraws, seed: u64) -> Result<LaCheckExport> {
    if full.names != marginalized.names {
        return Err(Error::NameMismatch);
    }
    let names = full.names.clone();
    let mut rows = Vec::with_capacity(full.n_retained() + marginalized.n_retained());
    for (tech, run) in [(Technique::Full, full), (Technique::Marginalized, marginalized)] {
        for c in &run.chains {
            rows.extend(c.draws.iter().map(|v| TaggedRow { technique: tech, chain: c.chain_id, values: v.clone() }));
        }
    }
    rows.shuffle(&mut stream(seed, Purpose::Export, 0));

    let cols_f: Vec<Vec<f64>> = (0..names.len()).map(|j| full.merged_column(j)).collect();
    let cols_m: Vec<Vec<f64>> = (0..names.len()).map(|j| marginalized.merged_column(j)).collect();
    let mut params = Vec::new();
    let mut qq = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let (mf, sf) = mean_sd(&cols_f[j]);
        let (mm, sm) = mean_sd(&cols_m[j]);
        params.push(ParamComparison { name: name.clone(), mean_full: mf, mean_marginalized: mm, sd_full: sf, sd_marginalized: sm });
        let mut a = cols_f[j].clone();
        let mut b = cols_m[j].clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let m = a.len().min(b.len());
        let points = (0..m)
            .map(|i| {
                let p = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.5 };
                (quantile_sorted(&a, p), quantile_sorted(&b, p))
            })
            .collect();
        qq.push(QqSeries { name: name.clone(), points });
    }

    let mut contours = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let xs = shared_axis(&cols_f[i], &cols_m[i]);
            let ys = shared_axis(&cols_f[j], &cols_m[j]);
            for (tech, cols) in [(Technique::Full, &cols_f), (Technique::Marginalized, &cols_m)] {
                contours.push(ContourGrid {
                    x_name: names[i].clone(),
                    y_name: names[j].clone(),
                    technique: tech,
                    density: kde_grid(&cols[i], &cols[j], &xs, &ys),
                    xs: xs.clone(),
                    ys: ys.clone(),
                });
            }
        }
    }
    Ok(LaCheckExport { names, rows, params, qq, contours })
}
