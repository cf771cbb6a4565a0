//! Effective sample size and split R-hat.

use rustfft::{num_complex::Complex, FftPlanner};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_CHAINS: usize = 2;
pub const MIN_DRAWS: usize = 100;

/// Splits every chain into halves (dropping the middle draw of odd chains).
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [c[..h].to_vec(), c[c.len() - h..].to_vec()]
        })
        .collect()
}

/// Normal scores of the pooled ranks, `Φ⁻¹((r − 3/8) / (S + 1/4))`, with
/// average ranks for ties.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut flat: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = flat.len() as f64;
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < flat.len() {
        let mut j = i;
        while j + 1 < flat.len() && flat[j + 1].0 == flat[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = std.inverse_cdf((rank - 0.375) / (s + 0.25));
        for item in &flat[i..=j] {
            out[item.1][item.2] = z;
        }
        i = j + 1;
    }
    out
}

/// Biased autocovariance at every lag, by FFT.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[..n].iter().map(|v| v.re / (m as f64 * n as f64)).collect()
}

fn sample_var(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn check(chains: &[Vec<f64>]) -> Result<()> {
    if chains.len() < MIN_CHAINS {
        return Err(Error::TooFewDraws(format!("{} chains, need {MIN_CHAINS}", chains.len())));
    }
    if let Some(c) = chains.iter().find(|c| c.len() < MIN_DRAWS) {
        return Err(Error::TooFewDraws(format!("a chain has {} draws, need {MIN_DRAWS}", c.len())));
    }
    if chains.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteValue);
    }
    Ok(())
}

/// Multi-chain ESS of equally long chains with Geyer's initial monotone
/// sequence truncation.
pub fn ess_raw(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let nf = n as f64;
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return Err(Error::TooFewDraws("zero variance".into()));
    }
    let rho = |t: usize| 1.0 - (mean_var - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut t = 0;
    let mut even = 1.0;
    let mut odd = rho(1);
    while t + 4 < n && even + odd > 0.0 {
        rho_hat[t + 1] = odd;
        if t + 2 >= n {
            break;
        }
        even = rho(t + 2);
        odd = rho(t + 3);
        if even + odd >= 0.0 {
            rho_hat[t + 2] = even;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    // initial monotone sequence
    let mut t = 1;
    while t + 3 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat.get(max_t + 1).copied().unwrap_or(0.0);
    let tau = tau.max(1.0 / total.log10());
    Ok(total / tau)
}

/// Rank-normalized split-chain effective sample size.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    let split = split_chains(chains);
    if split.iter().all(|c| c.iter().all(|&v| v == c[0])) && chains.iter().flatten().all(|&v| v == chains[0][0]) {
        return Err(Error::TooFewDraws("zero variance".into()));
    }
    ess_raw(&rank_normalize(&split))
}

/// Classic split R-hat.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    let split = split_chains(chains);
    let n = split[0].len() as f64;
    let means: Vec<f64> = split.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let w = split.iter().map(|c| sample_var(c)).sum::<f64>() / split.len() as f64;
    let b_over_n = sample_var(&means);
    if !(w > 0.0) {
        return Err(Error::TooFewDraws("zero variance".into()));
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{stream, Purpose};
    use rand_distr::{Distribution, StandardNormal};

    fn ar1_chains(rho: f64, m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..m)
            .map(|c| {
                let mut rng = stream(seed, Purpose::Aux, c as u64);
                let mut x: f64 = StandardNormal.sample(&mut rng);
                (0..n)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = rho * x + (1.0 - rho * rho).sqrt() * e;
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_have_full_ess() {
        let c = ar1_chains(0.0, 4, 1000, 1);
        let e = ess(&c).unwrap();
        assert!((e / 4000.0 - 1.0).abs() < 0.15, "{e}");
        assert!(split_rhat(&c).unwrap() < 1.01);
    }

    #[test]
    fn ar1_chains_match_the_analytic_ess() {
        let n = 5000;
        let c = ar1_chains(0.5, 4, n, 2);
        let want = 4.0 * n as f64 * 0.5 / 1.5;
        let e = ess(&c).unwrap();
        assert!((e / want - 1.0).abs() < 0.15, "{e} vs {want}");
    }

    #[test]
    fn strongly_correlated_chains() {
        let n = 50_000;
        let c = ar1_chains(0.9, 4, n, 4);
        let want = 4.0 * n as f64 * 0.1 / 1.9;
        let e = ess(&c).unwrap();
        assert!((e / want - 1.0).abs() < 0.15, "{e} vs {want}");
    }

    #[test]
    fn constant_chains_are_flagged() {
        let c = vec![vec![1.5; 200]; 4];
        assert!(matches!(ess(&c), Err(Error::TooFewDraws(_))));
        assert!(matches!(ess(&[vec![0.0; 200]]), Err(Error::TooFewDraws(_))));
        assert!(matches!(ess(&[vec![0.0; 50], vec![1.0; 50]]), Err(Error::TooFewDraws(_))));
    }

    #[test]
    fn affine_maps_leave_ess_unchanged() {
        let c = ar1_chains(0.3, 4, 400, 3);
        let mapped: Vec<Vec<f64>> = c.iter().map(|v| v.iter().map(|x| 3.0 * x - 7.0).collect()).collect();
        assert_eq!(ess(&c).unwrap(), ess(&mapped).unwrap());
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x: Vec<f64> = (0..50).map(|i| ((i * i) as f64 * 0.13).sin()).collect();
        let a = autocovariance(&x);
        let m = x.iter().sum::<f64>() / 50.0;
        for t in [0, 1, 7, 49] {
            let d: f64 = (0..50 - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / 50.0;
            assert!((a[t] - d).abs() < 1e-12);
        }
    }
}
