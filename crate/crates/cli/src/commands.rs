//! The subcommands. Each `*_tables` function does the work and returns file
//! contents; the thin wrappers write them next to a manifest.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use fluctsel::diagnostics::{divergence_filter, la_check_export, summarize, Summary, DIVERGENCE_THRESHOLD};
use fluctsel::model::Coord;
use fluctsel::nuts::{sample, BayesTarget, PosteriorDraws, SamplerConfig};
use fluctsel::optimize::{fit_mle, MleFit};
use fluctsel::priors::PriorSpec;
use fluctsel::selection::{delta_p, fit_ladder, rank_by_aic};
use fluctsel::simulate::{selection_strength, simulate_dataset, SimDesign};
use fluctsel::{Dataset, Emission, ModelParams, Structure};
use rayon::prelude::*;

use crate::config::Config;
use crate::io::{broods_to_csv, latents_to_csv, num, read_broods, table_to_string, write_file};
use crate::{replicate_seed, sampler_seed, setting_seed, SEED_SCHEME};

/// Largest posterior-mean difference, in posterior sd, at which the two
/// techniques count as agreeing in the efficiency study.
pub const OVERLAP_GATE: f64 = 0.1;

/// Coordinates whose estimation error the bias study reports.
pub const BIAS_COORDS: [Coord; 2] = [Coord::Phi(1, 1), Coord::LogSigma(1)];

/// Files produced by a command, by name.
pub type Outputs = Vec<(String, String)>;

pub fn write_outputs(out: &Path, outputs: &Outputs, manifest: &Manifest) -> Result<()> {
    for (name, contents) in outputs {
        write_file(out, name, contents)?;
    }
    write_file(out, "manifest.toml", &manifest.render())
}

/// Run record: tool version, command, seeds, the effective config and
/// command-specific facts. No timestamps, so reruns give identical files.
pub struct Manifest(toml::Table);

impl Manifest {
    pub fn new(command: &str, cfg: &Config) -> Self {
        let mut t = toml::Table::new();
        t.insert("tool".into(), "fluctsel".into());
        t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        t.insert("command".into(), command.into());
        t.insert("seed".into(), (cfg.run.seed as i64).into());
        t.insert("seed_scheme".into(), SEED_SCHEME.into());
        t.insert("config".into(), toml::Value::try_from(cfg).expect("config serializes"));
        Self(t)
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&toml::Value> {
        self.0.get(key)
    }

    pub fn render(&self) -> String {
        toml::to_string(&self.0).expect("manifest serializes")
    }
}

fn technique(laplace: bool) -> &'static str {
    if laplace {
        "laplace"
    } else {
        "full"
    }
}

/// Structure fitted by the simulation-design commands.
pub fn design_structure() -> Structure {
    Structure::ar1_theta()
}

pub fn simulate(cfg: &Config) -> Result<(Outputs, Manifest)> {
    let seed = replicate_seed(cfg.run.seed, 0);
    let design = cfg.sim_design(seed);
    let (data, states) = simulate_dataset(&design)?;
    let outputs = vec![
        ("broods.csv".into(), broods_to_csv(&data)),
        ("latents.csv".into(), latents_to_csv(&data, &design.params(), &states)),
    ];
    let mut m = Manifest::new("simulate", cfg);
    m.set("data_seed", seed.to_string());
    m.set("selection_strength", selection_strength(&design));
    m.set("n_years", data.n_years() as i64);
    m.set("n_broods", data.n_obs() as i64);
    Ok((outputs, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub se: f64,
}

/// Maximum-likelihood estimates with standard errors, per free coordinate.
pub fn mle_estimates<E: Emission>(data: &E, structure: Structure, init: Option<&ModelParams>) -> Result<(MleFit, Vec<Estimate>)> {
    let fit = fit_mle(data, structure, init)?;
    let est = structure
        .coords()
        .iter()
        .zip(&fit.std_errors)
        .map(|(c, &se)| Estimate { name: c.name(), value: fit.estimates.get(*c), se })
        .collect();
    Ok((fit, est))
}

pub fn bayes_run<E: Emission + Send + Sync>(
    data: &Arc<E>,
    structure: Structure,
    spec: &PriorSpec,
    laplace: bool,
    sampler: &SamplerConfig,
) -> Result<(PosteriorDraws, Summary)> {
    let target = BayesTarget::new(Arc::clone(data), structure, spec.clone(), laplace)?;
    let draws = sample(&target, sampler)?;
    let summary = summarize(&draws);
    Ok((draws, summary))
}

/// Estimates table: true value, MLE (with SE) and per-prior posterior mean
/// and sd, after a first row of divergence counts.
pub fn compare_table<E: Emission + Send + Sync>(data: Arc<E>, truth: Option<&ModelParams>, cfg: &Config, seed: u64) -> Result<String> {
    let structure = design_structure();
    let (_, mle) = mle_estimates(data.as_ref(), structure, None).context("maximum-likelihood fit")?;
    let sampler = cfg.sampler_config(sampler_seed(seed));
    let mut bayes = Vec::new();
    for (name, spec) in cfg.priors()? {
        let (_, s) = bayes_run(&data, structure, &spec, cfg.sampler.laplace, &sampler).with_context(|| format!("sampling under {name}"))?;
        bayes.push((name, s));
    }
    let mut header = vec!["parameter".to_string(), "true".into(), "mle".into(), "mle_se".into()];
    for (name, _) in &bayes {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
    }
    let mut rows = Vec::new();
    let mut div = vec!["divergences".to_string(), String::new(), String::new(), String::new()];
    for (_, s) in &bayes {
        div.push(s.divergences.to_string());
        div.push(String::new());
    }
    rows.push(div);
    for (c, e) in structure.coords().iter().zip(&mle) {
        let mut row = vec![e.name.clone(), truth.map_or("NA".into(), |t| num(t.get(*c))), num(e.value), num(e.se)];
        for (_, s) in &bayes {
            let p = s.param(&e.name).expect("sampled coordinate");
            row.push(num(p.mean));
            row.push(num(p.sd));
        }
        rows.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(table_to_string(&header, rows))
}

pub fn compare(cfg: &Config) -> Result<(Outputs, Manifest)> {
    let seed = replicate_seed(cfg.run.seed, 0);
    let mut m = Manifest::new("compare", cfg);
    let table = match &cfg.data.path {
        Some(path) => {
            m.set("data", path.display().to_string());
            compare_table(Arc::new(read_broods(path)?), None, cfg, seed)?
        }
        None => {
            let design = cfg.sim_design(seed);
            m.set("data_seed", seed.to_string());
            compare_table(Arc::new(simulate_dataset(&design)?.0), Some(&design.params()), cfg, seed)?
        }
    };
    m.set("sampler_seed", sampler_seed(seed).to_string());
    m.set("technique", technique(cfg.sampler.laplace));
    Ok((vec![("estimates.csv".into(), table)], m))
}

/// One replicate of the bias study.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// Estimates of [`BIAS_COORDS`]; `None` when the fit failed.
    pub mle: Option<[f64; 2]>,
    /// Per prior: posterior means of [`BIAS_COORDS`] and the run summary.
    pub bayes: Vec<(String, [f64; 2], Summary)>,
}

#[derive(Debug, Clone)]
pub struct BiasStudy {
    pub truth: [f64; 2],
    pub replicates: Vec<ReplicateResult>,
    /// Replicate indices kept and excluded by the divergence rule.
    pub kept: Vec<usize>,
    pub excluded: Vec<usize>,
}

pub fn run_bias_study(cfg: &Config) -> Result<BiasStudy> {
    let structure = design_structure();
    let truth_params = cfg.sim_design(0).params();
    let truth = BIAS_COORDS.map(|c| truth_params.get(c));
    let priors = cfg.priors()?;
    let replicates: Vec<ReplicateResult> = (0..cfg.study.replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateResult> {
            let seed = replicate_seed(cfg.run.seed, r as u64);
            let data = Arc::new(simulate_dataset(&cfg.sim_design(seed))?.0);
            let init = cfg.study.start_at_truth.then_some(&truth_params);
            let mle = fit_mle(data.as_ref(), structure, init).ok().map(|f| BIAS_COORDS.map(|c| f.estimates.get(c)));
            let sampler = cfg.sampler_config(sampler_seed(seed));
            let mut bayes = Vec::new();
            for (name, spec) in &priors {
                let (_, s) = bayes_run(&data, structure, spec, cfg.sampler.laplace, &sampler)
                    .with_context(|| format!("replicate {r}, {name}"))?;
                let means = BIAS_COORDS.map(|c| s.param(&c.name()).expect("sampled coordinate").mean);
                bayes.push((name.clone(), means, s));
            }
            Ok(ReplicateResult { replicate: r, mle, bayes })
        })
        .collect::<Result<_>>()?;
    // a replicate is dropped when any of its runs trips the divergence rule
    let runs: Vec<Summary> = replicates.iter().flat_map(|r| r.bayes.iter().map(|b| b.2.clone())).collect();
    let owner: Vec<usize> = replicates.iter().flat_map(|r| std::iter::repeat_n(r.replicate, r.bayes.len())).collect();
    let (_, bad_runs) = divergence_filter(&runs, DIVERGENCE_THRESHOLD);
    let mut excluded: Vec<usize> = bad_runs.iter().map(|&i| owner[i]).collect();
    excluded.dedup();
    let kept = (0..replicates.len()).filter(|r| !excluded.contains(r)).collect();
    Ok(BiasStudy { truth, replicates, kept, excluded })
}

pub fn bias_tables(study: &BiasStudy) -> Outputs {
    let names = BIAS_COORDS.map(|c| c.name());
    let mut techniques = vec!["mle".to_string()];
    if let Some(first) = study.replicates.first() {
        techniques.extend(first.bayes.iter().map(|b| b.0.clone()));
    }
    let mut header = vec!["replicate".to_string()];
    for t in &techniques {
        for n in &names {
            header.push(format!("{t}_abs_error_{n}"));
        }
    }
    let abs_err = |est: [f64; 2]| (0..2).map(|j| num((est[j] - study.truth[j]).abs())).collect::<Vec<_>>();
    let rows = study.kept.iter().map(|&r| {
        let rep = &study.replicates[r];
        let mut row = vec![r.to_string()];
        row.extend(rep.mle.map_or(vec!["NA".into(), "NA".into()], abs_err));
        for (_, means, _) in &rep.bayes {
            row.extend(abs_err(*means));
        }
        row
    });
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let bias = table_to_string(&header_ref, rows);

    let ledger_header = ["replicate", "technique", "divergences", "post_warmup_iterations", "divergence_fraction", "replicate_status"];
    let ledger_rows = study.replicates.iter().flat_map(|rep| {
        let status = if study.excluded.contains(&rep.replicate) { "excluded" } else { "kept" };
        rep.bayes.iter().map(move |(name, _, s)| {
            vec![
                rep.replicate.to_string(),
                name.clone(),
                s.divergences.to_string(),
                s.post_warmup_iterations.to_string(),
                num(s.divergence_fraction),
                status.to_string(),
            ]
        })
    });
    let ledger = table_to_string(&ledger_header, ledger_rows);
    vec![("bias.csv".into(), bias), ("ledger.csv".into(), ledger)]
}

pub fn bias_study(cfg: &Config) -> Result<(Outputs, Manifest)> {
    let study = run_bias_study(cfg)?;
    let mut m = Manifest::new("bias-study", cfg);
    m.set("technique", technique(cfg.sampler.laplace));
    m.set("divergence_threshold", DIVERGENCE_THRESHOLD);
    m.set("kept", study.kept.len() as i64);
    m.set("excluded", study.excluded.len() as i64);
    Ok((bias_tables(&study), m))
}

/// Largest posterior-mean difference between the two runs, in posterior sd.
pub fn max_standardized_difference(full: &PosteriorDraws, lap: &PosteriorDraws, seed: u64) -> Result<f64> {
    let cmp = la_check_export(full, lap, seed)?;
    Ok(cmp.params.iter().map(|p| p.standardized_difference()).fold(0.0, f64::max))
}

pub fn efficiency_table(cfg: &Config) -> Result<String> {
    let structure = design_structure();
    let header = [
        "setting", "n_years", "mean_size", "technique", "prior", "replicate", "min_ess", "wall_seconds", "efficiency", "divergences",
        "max_mean_difference_sd", "gate",
    ];
    let mut rows = Vec::new();
    for (i, setting) in cfg.settings().iter().enumerate() {
        let master = setting_seed(cfg.run.seed, i as u64);
        for r in 0..cfg.study.replicates {
            let seed = replicate_seed(master, r as u64);
            let design = SimDesign { n_years: setting.n_years, mean_size: setting.mean_size, ..cfg.sim_design(seed) };
            let data = Arc::new(simulate_dataset(&design)?.0);
            let sampler = cfg.sampler_config(sampler_seed(seed));
            for (name, spec) in cfg.priors()? {
                let (fd, fs) = bayes_run(&data, structure, &spec, false, &sampler)?;
                let (ld, ls) = bayes_run(&data, structure, &spec, true, &sampler)?;
                let diff = max_standardized_difference(&fd, &ld, seed)?;
                let gate = diff < OVERLAP_GATE;
                for (lap, s) in [(false, &fs), (true, &ls)] {
                    rows.push(vec![
                        i.to_string(),
                        setting.n_years.to_string(),
                        num(setting.mean_size),
                        technique(lap).into(),
                        name.clone(),
                        r.to_string(),
                        num(s.min_ess),
                        num(s.wall_seconds),
                        if gate { num(s.efficiency) } else { "NA".into() },
                        s.divergences.to_string(),
                        num(diff),
                        if gate { "pass" } else { "fail" }.into(),
                    ]);
                }
            }
        }
    }
    Ok(table_to_string(&header, rows))
}

pub fn efficiency_study(cfg: &Config) -> Result<(Outputs, Manifest)> {
    let table = efficiency_table(cfg)?;
    let mut m = Manifest::new("efficiency-study", cfg);
    m.set("overlap_gate_sd", OVERLAP_GATE);
    m.set("note", "wall times and efficiencies depend on the machine and thread count");
    Ok((vec![("efficiency.csv".into(), table)], m))
}

/// Draws, QQ, mean comparison and contour files for one prior and setting.
pub fn la_check_tables(full: &PosteriorDraws, lap: &PosteriorDraws, seed: u64, prefix: &str) -> Result<Outputs> {
    let e = la_check_export(full, lap, seed)?;
    let mut header = vec!["technique".to_string(), "chain".into()];
    header.extend(e.names.iter().cloned());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let draws = table_to_string(
        &header_ref,
        e.rows.iter().map(|row| {
            let mut v = vec![row.technique.label().to_string(), row.chain.to_string()];
            v.extend(row.values.iter().map(|x| num(*x)));
            v
        }),
    );
    let qq = table_to_string(
        &["parameter", "full", "laplace"],
        e.qq.iter().flat_map(|s| s.points.iter().map(|&(a, b)| vec![s.name.clone(), num(a), num(b)])),
    );
    let means = table_to_string(
        &["parameter", "mean_full", "mean_laplace", "sd_full", "sd_laplace", "difference_sd"],
        e.params.iter().map(|p| {
            vec![
                p.name.clone(),
                num(p.mean_full),
                num(p.mean_marginalized),
                num(p.sd_full),
                num(p.sd_marginalized),
                num(p.standardized_difference()),
            ]
        }),
    );
    let contours = table_to_string(
        &["x_parameter", "y_parameter", "technique", "x", "y", "density"],
        e.contours.iter().flat_map(|g| {
            g.xs.iter().enumerate().flat_map(move |(i, x)| {
                g.ys.iter().enumerate().map(move |(j, y)| {
                    vec![g.x_name.clone(), g.y_name.clone(), g.technique.label().into(), num(*x), num(*y), num(g.density[i][j])]
                })
            })
        }),
    );
    Ok(vec![
        (format!("{prefix}draws.csv"), draws),
        (format!("{prefix}qq.csv"), qq),
        (format!("{prefix}means.csv"), means),
        (format!("{prefix}contours.csv"), contours),
    ])
}

pub fn la_check(cfg: &Config) -> Result<(Outputs, Manifest)> {
    let structure = design_structure();
    let mut outputs = Vec::new();
    for (i, setting) in cfg.settings().iter().enumerate() {
        let seed = replicate_seed(setting_seed(cfg.run.seed, i as u64), 0);
        let design = SimDesign { n_years: setting.n_years, mean_size: setting.mean_size, ..cfg.sim_design(seed) };
        let data = Arc::new(simulate_dataset(&design)?.0);
        let sampler = cfg.sampler_config(sampler_seed(seed));
        for (name, spec) in cfg.priors()? {
            let (full, _) = bayes_run(&data, structure, &spec, false, &sampler)?;
            let (lap, _) = bayes_run(&data, structure, &spec, true, &sampler)?;
            outputs.extend(la_check_tables(&full, &lap, seed, &format!("la_s{i}_{name}_"))?);
        }
    }
    Ok((outputs, Manifest::new("la-check", cfg)))
}

pub fn model_select_tables(data: &Dataset, candidates: &[usize]) -> Result<Outputs> {
    let entries = fit_ladder(data, candidates)?;
    let report = rank_by_aic(&entries)?;
    let ladder = table_to_string(
        &["rank", "model", "description", "n_free", "nll", "aic", "delta_p", "delta_aic", "delta_p_reference"],
        report.ranked.iter().enumerate().map(|(i, m)| {
            vec![
                (i + 1).to_string(),
                m.id.to_string(),
                m.description.to_string(),
                m.n_free.to_string(),
                num(m.nll),
                num(m.aic),
                m.delta_p.to_string(),
                num(m.delta_aic),
                delta_p(m.id).expect("ranked candidate").to_string(),
            ]
        }),
    );
    let failures = table_to_string(&["model", "error"], report.failures.iter().map(|(id, e)| vec![id.to_string(), e.to_string()]));
    let estimates = table_to_string(
        &["model", "parameter", "estimate", "se", "converged"],
        entries.iter().filter_map(|e| e.fit.as_ref().ok().map(|f| (e, f))).flat_map(|(e, f)| {
            e.candidate.structure.coords().into_iter().zip(&f.std_errors).map(move |(c, se)| {
                vec![e.candidate.id.to_string(), c.name(), num(f.estimates.get(c)), num(*se), f.converged.to_string()]
            })
        }),
    );
    Ok(vec![("ladder.csv".into(), ladder), ("failures.csv".into(), failures), ("estimates.csv".into(), estimates)])
}

pub fn model_select(cfg: &Config) -> Result<(Outputs, Manifest)> {
    let path = cfg.data.path.as_ref().context("model-select needs a brood file (--data or [data] path)")?;
    let data = read_broods(path)?;
    let outputs = model_select_tables(&data, &cfg.select.candidates)?;
    let mut m = Manifest::new("model-select", cfg);
    m.set("data", path.display().to_string());
    m.set("n_years", data.n_years() as i64);
    m.set("n_broods", data.n_obs() as i64);
    Ok((outputs, m))
}
