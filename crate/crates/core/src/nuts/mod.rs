//! No-U-Turn sampling.

mod draws;
mod sampler;
mod targets;

pub use draws::{ChainDraws, PosteriorDraws};
pub use sampler::{init_jitter, sample, SamplerConfig, Target, INIT_RADIUS, MAX_DELTA_H, MAX_INIT_ATTEMPTS};
pub use targets::{BayesTarget, Gaussian};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ks_statistic, summarize};
    use crate::error::Error;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn config(seed: u64) -> SamplerConfig {
        SamplerConfig { seed, ..SamplerConfig::default() }
    }

    #[test]
    fn standard_normal_10d() {
        let draws = sample(&Gaussian::standard(10), &config(1)).unwrap();
        assert_eq!(draws.retained_per_chain(), vec![1000; 4]);
        assert_eq!(draws.n_divergent(), 0);
        for j in 0..10 {
            let x = draws.merged_column(j);
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(m.abs() < 0.05, "mean {m}");
            assert!((v - 1.0).abs() < 0.1, "var {v}");
        }
        let acc: Vec<f64> = draws.chains.iter().flat_map(|c| c.accept_stat.clone()).collect();
        let mean_acc = acc.iter().sum::<f64>() / acc.len() as f64;
        assert!((0.90..=0.99).contains(&mean_acc), "{mean_acc}");
        assert!(draws.chains.iter().all(|c| c.energy.iter().all(|e| e.is_finite())));
        assert!(summarize(&draws).params.iter().all(|p| p.rhat < 1.01));
    }

    #[test]
    fn correlated_pair() {
        let draws = sample(&Gaussian::correlated_pair(0.9), &config(2)).unwrap();
        let (a, b) = (draws.merged_column(0), draws.merged_column(1));
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!((r - 0.9).abs() < 0.05, "{r}");
    }

    #[test]
    fn one_dimensional_cdf_matches() {
        let draws = sample(&Gaussian::standard(1), &config(3)).unwrap();
        let mut x = draws.merged_column(0);
        assert_eq!(x.len(), 4000);
        let std = Normal::new(0.0, 1.0).unwrap();
        let d = ks_statistic(&mut x, |v| std.cdf(v));
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = SamplerConfig { warmup: 200, total_iters: 400, ..config(9) };
        let a = sample(&Gaussian::correlated_pair(0.5), &cfg).unwrap();
        let b = sample(&Gaussian::correlated_pair(0.5), &SamplerConfig { parallel: false, ..cfg.clone() }).unwrap();
        for (x, y) in a.chains.iter().zip(&b.chains) {
            assert_eq!(x.draws, y.draws);
            assert_eq!(x.divergent, y.divergent);
        }
        let c = sample(&Gaussian::correlated_pair(0.5), &SamplerConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.chains[0].draws, c.chains[0].draws);
    }

    #[test]
    fn init_jitter_examples() {
        assert_eq!(init_jitter(5, 4, 0, 0), init_jitter(5, 4, 0, 0));
        assert_ne!(init_jitter(5, 4, 0, 0), init_jitter(5, 4, 1, 0));
        assert!(init_jitter(0, 4, 0, 0).is_empty());
        assert!(init_jitter(100, 4, 2, 0).iter().all(|v| v.abs() < INIT_RADIUS));
    }

    #[derive(Clone)]
    struct Nowhere;

    impl Target for Nowhere {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_grad(&mut self, _: &[f64]) -> crate::Result<(f64, Vec<f64>)> {
            Ok((f64::NEG_INFINITY, vec![0.0; 2]))
        }
        fn output_names(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn output(&self, q: &[f64]) -> Vec<f64> {
            q.to_vec()
        }
    }

    #[test]
    fn unusable_target_fails_to_initialize() {
        assert_eq!(sample(&Nowhere, &config(1)).unwrap_err(), Error::InitializationFailure(MAX_INIT_ATTEMPTS));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SamplerConfig { warmup: 3000, ..config(1) },
            SamplerConfig { thin: 0, ..config(1) },
            SamplerConfig { adapt_delta: 1.0, ..config(1) },
        ] {
            assert!(matches!(sample(&Gaussian::standard(1), &cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
