use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nerhd_core::rng::{rng_for, stream};
use nerhd_core::sim::{generate_population, ScenarioConfig, ScenarioKind};

fn nerhd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nerhd")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes a small two-slope sample and returns `(units, areas)`.
fn sample_files(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = ScenarioConfig { kind: ScenarioKind::SBeta0, m: 8, pop_size: 40, sample_size: 6, replicates: 1, seed: 21 };
    let pop = generate_population(&cfg, 0).unwrap().population;
    let ds = pop.draw_sample(6, &mut rng_for(21, stream::SAMPLING, 0)).unwrap().to_dataset();
    let (u, a) = (dir.join("units.csv"), dir.join("areas.csv"));
    nerhd::io::write_dataset(fs::File::create(&u).unwrap(), fs::File::create(&a).unwrap(), &ds).unwrap();
    (u, a)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_prints_one_row_per_area() {
    let dir = tempfile::tempdir().unwrap();
    let (u, a) = sample_files(dir.path());
    let o = nerhd(&["fit", "--units", s(&u), "--areas", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "area_id,tau,beta0,alpha0,beta1,sigma2_gamma,sigma2_eps,shrinkage");
    assert_eq!(lines.len(), 9);
}

#[test]
fn predict_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (u, a) = sample_files(dir.path());
    let out = dir.path().join("run");
    let o = nerhd(&["predict", "--units", s(&u), "--areas", s(&a), "--tau", "fixed:0.5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let set = nerhd::io::read_predictions(fs::File::open(out.join("predictions.csv")).unwrap()).unwrap();
    assert_eq!(set.area_ids.len(), 8);
    assert!(set.ebp_mle.is_some());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(nerhd::cli::manifest_path(&out)).unwrap()).unwrap();
    assert_eq!(manifest["command"], "predict");
    assert_eq!(manifest["config"]["model"]["tau"], "fixed:0.5");
    assert_eq!(manifest["outputs"][0], "predictions.csv");
}

#[test]
fn seeded_bootstrap_replays_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (u, a) = sample_files(dir.path());
    let run = |workers: &str| {
        let o = nerhd(&["uncertainty", "--units", s(&u), "--areas", s(&a), "--R", "12", "--seed", "77", "--workers", workers]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let one = run("1");
    assert_eq!(one, run("1"));
    assert_eq!(one, run("3"));
    assert_eq!(one.lines().next(), Some("area_id,ebp,value,lower,upper"));
}

#[test]
fn diagnose_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (u, a) = sample_files(dir.path());
    let before = (fs::read(&u).unwrap(), fs::read(&a).unwrap(), fs::metadata(&u).unwrap().modified().unwrap());
    let out = dir.path().join("diag");
    let o = nerhd(&["diagnose", "--units", s(&u), "--areas", s(&a), "--method", "naive", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let after = (fs::read(&u).unwrap(), fs::read(&a).unwrap(), fs::metadata(&u).unwrap().modified().unwrap());
    assert_eq!(before, after);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let w = &manifest["summary"]["wald"];
    assert_eq!(w["df"], 8);
    assert!(w["statistic"].as_f64().unwrap() >= 0.0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Wald W"));
}

#[test]
fn model_based_simulation_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let args = ["simulate", "--scenario", "sbeta0", "--m", "6", "--N", "20", "--n", "4", "--T", "3", "--method", "naive", "--seed", "4", "--out", s(&out)];
    let o = nerhd(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = nerhd::io::read_metrics(fs::File::open(out.join("metrics_n4.csv")).unwrap()).unwrap();
    assert_eq!(table.replicates, 3);
    assert_eq!(table.predictors.len(), 7);
    assert_eq!(table.rmse_estimators[0].name, "naive");
    assert!(out.join("parameters_n4.csv").exists());
    let first = fs::read(out.join("metrics_n4.csv")).unwrap();
    assert_eq!(nerhd(&args).status.code(), Some(0));
    assert_eq!(first, fs::read(out.join("metrics_n4.csv")).unwrap());
}

#[test]
fn design_based_simulation_reads_a_population() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { kind: ScenarioKind::S00, m: 4, pop_size: 30, sample_size: 5, replicates: 1, seed: 8 };
    let pop = generate_population(&cfg, 0).unwrap().population;
    let path = dir.path().join("pop.csv");
    nerhd::io::write_population(fs::File::create(&path).unwrap(), &pop).unwrap();
    let o = nerhd(&["simulate", "--population", s(&path), "--n", "5,30", "--T", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("n,name,area,metric,value"));
    // A census has no design error.
    let census_rb = text
        .lines()
        .filter(|l| l.starts_with("30,ebp_finite,") && l.contains(",rb,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap());
    assert!(census_rb.clone().count() == 4 && census_rb.into_iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn exit_codes_separate_usage_data_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let (u, a) = sample_files(dir.path());
    assert_eq!(nerhd(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(nerhd(&["fit", "--units", s(&u), "--areas", s(&a), "--tau", "fixed:1.5"]).status.code(), Some(1));
    assert_eq!(nerhd(&["fit", "--units", s(&u), "--areas", s(&a), "--grid", "0.1:0.9"]).status.code(), Some(1));
    assert_eq!(nerhd(&["--help"]).status.code(), Some(0));

    let missing = dir.path().join("nope.csv");
    assert_eq!(nerhd(&["fit", "--units", s(&missing), "--areas", s(&a)]).status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "area_id,y,x1\na,1,x\n").unwrap();
    let o = nerhd(&["fit", "--units", s(&bad), "--areas", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    // A covariate that never varies cannot be separated from the intercept.
    let flat_u = dir.path().join("flat_u.csv");
    let flat_a = dir.path().join("flat_a.csv");
    fs::write(&flat_u, "area_id,y,x1\na,1,2\na,2,2\nb,4,2\nb,6,2\nc,3,2\nc,2,2\n").unwrap();
    fs::write(&flat_a, "area_id,N,Xbar1\na,10,2\nb,10,2\nc,10,2\n").unwrap();
    let o = nerhd(&["fit", "--units", s(&flat_u), "--areas", s(&flat_a), "--tau", "fixed:0.5"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
