//! Self-checks against independent oracles, run by `fluctsel verify`.
//!
//! Each check is small enough that the whole set finishes in seconds.

use anyhow::Result;
use fluctsel::autodiff::gradient;
use fluctsel::laplace::marginal_nll;
use fluctsel::model::{joint_nll_compact, ActiveCovariances, JointDensityFn, THETA};
use fluctsel::nuts::{sample, Gaussian, SamplerConfig};
use fluctsel::oracles::{ghq_marginal, kalman_nll, random_linear_gaussian, LinearGaussianModel};
use fluctsel::priors::{change_of_variables_ks, jacobian_adjustment, PriorSpec, ScalePrior};
use fluctsel::seeds::{derive_seed, stream, Purpose};
use fluctsel::simulate::{simulate_from_params, SimDesign, SizeLaw};
use fluctsel::{Dataset, ModelParams, Structure};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STATIONARITY_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const KALMAN_TOL: f64 = 1e-6;
pub const QUADRATURE_TOL: f64 = 0.005;
pub const MOMENT_TOL: f64 = 0.1;
pub const KS_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Use the negated log-Jacobian in the change-of-variables check. The
    /// check must then fail; this exercises the checker itself.
    pub flip_jacobian: bool,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

pub fn run_checks(opts: VerifyOptions, seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        stationarity(seed)?,
        gradient_vs_differences(seed)?,
        laplace_vs_kalman(seed)?,
        laplace_vs_quadrature(seed)?,
        sampler_moments(seed)?,
        jacobian(seed, opts.flip_jacobian),
    ])
}

pub fn report(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        out.push_str(&format!(
            "{} {}: {:.3e} (tolerance {:.1e}) {}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        ));
    }
    out
}

fn check(name: &'static str, measured: f64, tolerance: f64, detail: String) -> Check {
    Check { name, pass: measured < tolerance, measured, tolerance, detail }
}

fn stationarity(seed: u64) -> Result<Check> {
    let mut rng = stream(seed, Purpose::Aux, 101);
    let mut s = Structure::constant();
    s.stochastic = [true; 3];
    s.phi_free = [[true; 3]; 3];
    s.rho_free = [true; 3];
    let (mut worst, mut found) = (0.0f64, 0);
    while found < 20 {
        let mut p = ModelParams::new(s);
        for v in p.phi.iter_mut().flatten() {
            *v = rng.random_range(-0.5..0.5);
        }
        for r in p.rho.iter_mut() {
            *r = rng.random_range(-0.7..0.7);
        }
        let Ok(cov) = ActiveCovariances::new(&p) else { continue };
        let back = &cov.phi * &cov.gamma0 * cov.phi.transpose() + &cov.sigma_w;
        worst = worst.max((&cov.gamma0 - back).amax());
        found += 1;
    }
    Ok(check("stationary covariance", worst, STATIONARITY_TOL, "max Lyapunov residual over 20 draws".into()))
}

fn rich_point(rng: &mut impl Rng) -> ModelParams {
    let mut s = Structure::ar1_theta();
    s.stochastic = [true; 3];
    s.rho_free = [true, true, false];
    loop {
        let mut p = ModelParams::new(s);
        p.mu = [rng.random_range(1.0..3.0), rng.random_range(15.0..25.0), rng.random_range(2.5..3.5)];
        p.phi[THETA][THETA] = rng.random_range(-0.8..0.8);
        p.rho[0] = rng.random_range(-0.6..0.6);
        p.rho[1] = rng.random_range(-0.6..0.6);
        p.log_sigma = [rng.random_range(-2.0..-0.5), rng.random_range(0.5..2.5), rng.random_range(-2.0..-0.5)];
        if p.validate().is_ok() && ActiveCovariances::new(&p).is_ok() {
            return p;
        }
    }
}

fn gradient_vs_differences(seed: u64) -> Result<Check> {
    let mut rng = stream(seed, Purpose::Aux, 102);
    let mut worst = 0.0f64;
    for i in 0..3 {
        let p = rich_point(&mut rng);
        let data = simulate_from_params(&p, 8, SizeLaw::poisson(20.0), p.mu[THETA], 20.0, 1, derive_seed(seed, Purpose::Data, 102 + i))?.data;
        let s: Vec<f64> = (0..8 * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = JointDensityFn::<Dataset>::pack(&p, &s);
        let (_, g) = gradient(&JointDensityFn::new(&p, &data), &x)?;
        let nf = p.structure.n_free();
        let f = |x: &[f64]| joint_nll_compact(&p.with_free_values(&x[..nf]).unwrap(), &x[nf..], &data).unwrap();
        for j in 0..x.len() {
            let h = 1e-5 * x[j].abs().max(1.0);
            let central = |h: f64| {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[j] += h;
                b[j] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            };
            let fd = (4.0 * central(h / 2.0) - central(h)) / 3.0;
            worst = worst.max((g[j] - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(check("tape gradient vs finite differences", worst, GRADIENT_TOL, "max relative error at 3 points".into()))
}

fn laplace_vs_kalman(seed: u64) -> Result<Check> {
    let mut rng = stream(seed, Purpose::Aux, 103);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (p, data) = random_linear_gaussian(&mut rng, 15, 3);
        let lap = marginal_nll(&p, &data)?;
        let kal = kalman_nll(&LinearGaussianModel::from_params(&p, &data)?)?;
        worst = worst.max((lap - kal).abs());
    }
    Ok(check("Laplace vs Kalman filter", worst, KALMAN_TOL, "max absolute error of the negative log marginal, 10 linear-Gaussian models".into()))
}

/// Two years of 50 broods each: large enough that the Laplace error is small.
fn laplace_vs_quadrature(seed: u64) -> Result<Check> {
    let design = SimDesign::default();
    let p = design.params();
    let fifty = SizeLaw { mean: 50.0, min: 50, max: 50 };
    let mut worst = 0.0f64;
    for i in 0..3 {
        let data = simulate_from_params(&p, 2, fifty, design.mu[THETA], design.sigma_z, 1, derive_seed(seed, Purpose::Data, 104 + i))?.data;
        let lap = marginal_nll(&p, &data)?;
        let ghq = ghq_marginal(&p, &data, 21)?;
        worst = worst.max((lap - ghq).abs() / ghq.abs());
    }
    Ok(check("Laplace vs quadrature", worst, QUADRATURE_TOL, "max relative difference, 2 years of 50 broods, 21 nodes per dimension".into()))
}

fn sampler_moments(seed: u64) -> Result<Check> {
    let cfg = SamplerConfig { seed: derive_seed(seed, Purpose::Chain, 105), ..SamplerConfig::default() };
    let draws = sample(&Gaussian::standard(4), &cfg)?;
    let mut worst = 0.0f64;
    for j in 0..4 {
        let x = draws.merged_column(j);
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        worst = worst.max(m.abs()).max((v - 1.0).abs());
    }
    Ok(check("sampler on a standard normal", worst, MOMENT_TOL, format!("max |mean| or |variance − 1| in 4 dimensions; {} divergences", draws.n_divergent())))
}

fn jacobian(seed: u64, flip: bool) -> Check {
    let spec = PriorSpec::new(ScalePrior::PRIOR2);
    let mut rng = stream(seed, Purpose::Aux, 106);
    let ks = if flip {
        change_of_variables_ks(&spec, |s, l| -jacobian_adjustment(s, l), 50_000, &mut rng)
    } else {
        change_of_variables_ks(&spec, jacobian_adjustment, 50_000, &mut rng)
    };
    let detail = if flip { "KS distance of log-scale draws, Jacobian negated" } else { "KS distance of log-scale draws" };
    check("prior change of variables", ks, KS_TOL, detail.into())
}
