use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fluctsel::optimize::fit_mle;
use fluctsel::oracles::{kalman_nll, random_linear_gaussian, LinearGaussianModel};
use fluctsel::seeds::{stream, Purpose};
use fluctsel::simulate::{simulate_dataset, SimDesign};
use fluctsel::{ModelParams, Structure};
use fluctsel_cli::commands::{bias_tables, run_bias_study, Manifest};
use fluctsel_cli::config::Config;

const SMALL: &str = r#"
[design]
n_years = 6
mean_size = 15.0

[sampler]
chains = 2
warmup = 100
iterations = 200
thin = 1

[study]
replicates = 2
priors = ["prior2"]
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluctsel")).args(args).arg("--out").arg(dir).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_is_reproducible_and_reports_selection_strength() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(d.path(), &["simulate", "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["broods.csv", "latents.csv", "manifest.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let (_, latents) = read_csv(&a.path().join("latents.csv"));
    assert_eq!(latents.len(), 50);
    let manifest: toml::Table = fs::read_to_string(a.path().join("manifest.toml")).unwrap().parse().unwrap();
    let s = manifest["selection_strength"].as_float().unwrap();
    assert!((s - 0.267).abs() < 5e-4, "{s}");
    assert_eq!(manifest["n_years"].as_integer(), Some(50));
}

#[test]
fn different_seeds_give_different_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path(), &["simulate", "--seed", "1"]);
    run(b.path(), &["simulate", "--seed", "2"]);
    assert_ne!(fs::read(a.path().join("broods.csv")).unwrap(), fs::read(b.path().join("broods.csv")).unwrap());
}

#[test]
fn compare_writes_one_row_per_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = run(dir.path(), &["compare", "--config", &cfg, "--laplace", "on"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("estimates.csv"));
    assert_eq!(header, ["parameter", "true", "mle", "mle_se", "prior2_mean", "prior2_sd"]);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["divergences", "mu_alpha", "mu_theta", "mu_omega", "phi_theta_theta", "log_sigma_theta"]);
    let log_sigma: f64 = rows[5][1].parse().unwrap();
    assert!((log_sigma - 20f64.ln()).abs() < 1e-12);
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("technique = \"laplace\""), "{manifest}");
}

#[test]
fn compare_on_a_brood_file_leaves_truth_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = run(dir.path(), &["simulate", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = dir.path().join("broods.csv").display().to_string();
    let out = dir.path().join("cmp");
    let o = Command::new(env!("CARGO_BIN_EXE_fluctsel"))
        .args(["compare", "--config", &cfg, "--laplace", "on", "--data", &data, "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&out.join("estimates.csv"));
    assert!(rows[1..].iter().all(|r| r[1] == "NA"));
}

#[test]
fn bad_config_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[sampler]\nchainz = 4\n").unwrap();
    let o = run(dir.path(), &["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("chainz"), "{}", stderr(&o));
    assert!(!dir.path().join("broods.csv").exists());

    let o = run(dir.path(), &["simulate", "--prior", "prior7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prior7"), "{}", stderr(&o));
}

#[test]
fn model_select_names_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broods.csv");
    fs::write(&path, "year,laying_date,n_fledglings\n1960,20,3\n1960,21,-1\n").unwrap();
    let o = run(dir.path(), &["model-select", "--data", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("negative"), "{err}");
}

#[test]
fn model_select_ranks_candidates_with_their_extra_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sel.toml");
    fs::write(&cfg, "[design]\nn_years = 15\nmean_size = 30.0\n[select]\ncandidates = [1, 2, 3]\n").unwrap();
    let cfg = cfg.display().to_string();
    assert!(run(dir.path(), &["simulate", "--config", &cfg]).status.success());
    let data = dir.path().join("broods.csv").display().to_string();
    let o = run(dir.path(), &["model-select", "--config", &cfg, "--data", &data]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("ladder.csv"));
    assert_eq!(header, ["rank", "model", "description", "n_free", "nll", "aic", "delta_p", "delta_aic", "delta_p_reference"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][7], "0");
    let aic: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(aic.windows(2).all(|w| w[0] <= w[1]));
    for r in &rows {
        let (nll, aic, k): (f64, f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap(), r[3].parse().unwrap());
        assert!((aic - (2.0 * nll + 2.0 * k)).abs() < 1e-9);
    }
}

#[test]
fn verify_passes_and_a_flipped_jacobian_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["verify"]);
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success(), "{out}{}", stderr(&o));
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
    assert!(out.contains("Laplace vs Kalman filter"), "{out}");

    let o = run(dir.path(), &["verify", "--flip-jacobian"]);
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(o.status.code(), Some(1), "{out}");
    assert!(out.lines().any(|l| l.starts_with("FAIL prior change of variables")), "{out}");
}

#[test]
fn maximum_likelihood_agrees_with_the_kalman_likelihood() {
    let mut rng = stream(11, Purpose::Aux, 0);
    let (truth, data) = random_linear_gaussian(&mut rng, 30, 6);
    let fit = fit_mle(&data, truth.structure, Some(&truth)).unwrap();
    assert!(fit.converged);
    let kal = |p: &ModelParams| kalman_nll(&LinearGaussianModel::from_params(p, &data).unwrap()).unwrap();
    assert!((kal(&fit.estimates) - fit.nll_at_opt).abs() < 1e-6);
    // the optimum of the oracle likelihood: no coordinate step improves it
    let x = fit.estimates.free_values();
    for j in 0..x.len() {
        let h = 1e-4 * x[j].abs().max(1.0);
        let (mut a, mut b) = (x.clone(), x.clone());
        a[j] += h;
        b[j] -= h;
        let (fa, fb) = (kal(&fit.estimates.with_free_values(&a).unwrap()), kal(&fit.estimates.with_free_values(&b).unwrap()));
        let slope = (fa - fb) / (2.0 * h);
        assert!(slope.abs() < 1e-3, "coordinate {j}: slope {slope}");
    }
}

#[test]
fn long_series_recover_the_optimum_autocorrelation() {
    let design = SimDesign { n_years: 200, mean_size: 200.0, seed: 3, ..SimDesign::default() };
    let (data, _) = simulate_dataset(&design).unwrap();
    let fit = fit_mle(&data, Structure::ar1_theta(), Some(&design.params())).unwrap();
    let phi = fit.estimates.phi[1][1];
    assert!((phi - 0.4).abs() < 0.1, "{phi}");
}

#[test]
fn bias_study_ledger_covers_every_run() {
    let mut cfg = Config::from_toml(SMALL).unwrap();
    cfg.sampler.laplace = true;
    let study = run_bias_study(&cfg).unwrap();
    assert_eq!(study.replicates.len(), 2);
    assert_eq!(study.kept.len() + study.excluded.len(), 2);
    let outputs = bias_tables(&study);
    let ledger = &outputs.iter().find(|(n, _)| n == "ledger.csv").unwrap().1;
    assert_eq!(ledger.lines().count(), 1 + 2);
    let bias = &outputs.iter().find(|(n, _)| n == "bias.csv").unwrap().1;
    assert_eq!(bias.lines().next().unwrap(), "replicate,mle_abs_error_phi_theta_theta,mle_abs_error_log_sigma_theta,prior2_abs_error_phi_theta_theta,prior2_abs_error_log_sigma_theta");
    assert_eq!(bias.lines().count(), 1 + study.kept.len());
    let m = Manifest::new("bias-study", &cfg);
    assert_eq!(m.get("seed").and_then(|v| v.as_integer()), Some(1));
}

#[test]
fn la_check_and_efficiency_tables_have_their_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = run(dir.path(), &["la-check", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let p = |f: &str| dir.path().join(format!("la_s0_prior2_{f}"));
    let (header, draws) = read_csv(&p("draws.csv"));
    assert_eq!(&header[..2], ["technique", "chain"]);
    // two techniques, two chains, 100 retained draws each
    assert_eq!(draws.len(), 2 * 2 * 100);
    let (_, qq) = read_csv(&p("qq.csv"));
    for name in ["mu_theta", "log_sigma_theta"] {
        let pts: Vec<(f64, f64)> = qq.iter().filter(|r| r[0] == name).map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
        assert!(!pts.is_empty());
        assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1), "{name}");
    }
    let (_, contours) = read_csv(&p("contours.csv"));
    assert_eq!(contours.len() % (64 * 64), 0);
    assert!(!contours.is_empty());

    let o = run(dir.path(), &["efficiency-study", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("efficiency.csv"));
    assert_eq!(header.len(), 12);
    assert_eq!(rows.len(), 2 * 2);
    for r in &rows {
        assert!(r[11] == "pass" || r[11] == "fail");
        assert_eq!(r[8] == "NA", r[11] == "fail");
    }
}
