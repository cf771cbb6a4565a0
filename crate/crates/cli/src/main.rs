use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fluctsel_cli::commands::{self, write_outputs};
use fluctsel_cli::config::Config;
use fluctsel_cli::verify::{report, run_checks, VerifyOptions};

/// Simulation studies and model fitting for fluctuating stabilizing selection.
#[derive(Parser)]
#[command(name = "fluctsel", version)]
struct Cli {
    /// TOML configuration file; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 for all cores (overrides `run.workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Prior on the scale parameters, repeatable (overrides `study.priors`).
    #[arg(long, global = true)]
    prior: Vec<String>,
    /// Marginalize the latents with the Laplace approximation (overrides `sampler.laplace`).
    #[arg(long, global = true, value_enum)]
    laplace: Option<Toggle>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset from the design.
    Simulate,
    /// Maximum likelihood and posterior estimates side by side.
    Compare {
        /// Brood CSV; simulated from the design when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Absolute estimation error over simulated replicates.
    BiasStudy,
    /// Effective sample size per second, with and without the Laplace approximation.
    EfficiencyStudy,
    /// Posterior draws of both techniques for visual comparison.
    LaCheck,
    /// Fit the candidate ladder and rank it by AIC.
    ModelSelect {
        /// Brood CSV.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the built-in checks against independent oracles.
    Verify {
        /// Negate the prior log-Jacobian; the change-of-variables check must then fail.
        #[arg(long)]
        flip_jacobian: bool,
    },
}

fn config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    if !cli.prior.is_empty() {
        cfg.study.priors = cli.prior.clone();
    }
    if let Some(t) = cli.laplace {
        cfg.sampler.laplace = matches!(t, Toggle::On);
    }
    if let Command::Compare { data: Some(p) } | Command::ModelSelect { data: Some(p) } = &cli.command {
        cfg.data.path = Some(p.clone());
    }
    cfg.validate().context("after command-line overrides")?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = config(&cli)?;
    if cfg.run.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.run.workers).build_global().context("starting worker threads")?;
    }
    let (outputs, manifest) = match cli.command {
        Command::Simulate => commands::simulate(&cfg)?,
        Command::Compare { .. } => commands::compare(&cfg)?,
        Command::BiasStudy => commands::bias_study(&cfg)?,
        Command::EfficiencyStudy => commands::efficiency_study(&cfg)?,
        Command::LaCheck => commands::la_check(&cfg)?,
        Command::ModelSelect { .. } => commands::model_select(&cfg)?,
        Command::Verify { flip_jacobian } => {
            let checks = run_checks(VerifyOptions { flip_jacobian }, cfg.run.seed)?;
            let text = report(&checks);
            print!("{text}");
            let mut m = commands::Manifest::new("verify", &cfg);
            m.set("flip_jacobian", flip_jacobian);
            write_outputs(&cli.out, &vec![("verify.txt".into(), text)], &m)?;
            return Ok(checks.iter().all(|c| c.pass));
        }
    };
    write_outputs(&cli.out, &outputs, &manifest)?;
    for (name, _) in &outputs {
        println!("wrote {}", cli.out.join(name).display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
