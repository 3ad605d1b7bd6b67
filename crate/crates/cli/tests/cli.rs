use std::fs;
use std::path::Path;
use std::process::Command;

use semipde::experiment::{ExperimentConfig, Method};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semipde"))
}

/// Case 1 shrunk until every subcommand finishes in seconds.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut c = ExperimentConfig::case1_desk();
    c.n = 40;
    c.repeats = 2;
    c.solver.nodes = 16;
    c.fit.hidden = vec![4];
    c.fit.max_epochs = 3;
    c.fit.eta = 1e-3;
    c.inference.nuisance_epochs = 2;
    c.methods = vec![Method::SemiPde, Method::Parametric];
    c.quadrature = 16;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn template_round_trips_through_the_config_parser() {
    for preset in ["benchmark", "coverage"] {
        let text = run(&["template", preset]);
        ExperimentConfig::from_json(&text).unwrap();
    }
}

#[test]
fn simulate_writes_dataset_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("sim");
    run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--trajectory"]);
    let text = fs::read_to_string(out.join("dataset.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,y1"));
    assert_eq!(lines.count(), 40);
    assert!(out.join("reference.csv").exists());
}

#[test]
fn fit_and_infer_on_external_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let sim = dir.path().join("sim");
    run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let data = sim.join("dataset.csv");

    let fit_dir = dir.path().join("fit");
    run(&["fit", "--config", cfg.to_str().unwrap(), "--out", fit_dir.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    for f in ["trace.csv", "results.csv", "network.json", "solution.csv"] {
        assert!(fit_dir.join(f).exists(), "{f} missing");
    }
    let trace = fs::read_to_string(fit_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,train_loss,val_loss,phi_distance,theta1"));

    let inf_dir = dir.path().join("infer");
    run(&["infer", "--config", cfg.to_str().unwrap(), "--out", inf_dir.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(inf_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["intervals"].as_array().unwrap().len(), 3);
    assert_eq!(report["n"], 40);
}

#[test]
fn benchmark_and_coverage_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let b = dir.path().join("bench");
    run(&["benchmark", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let cells = fs::read_to_string(b.join("results.csv")).unwrap();
    assert_eq!(cells.lines().count(), 3);
    assert!(b.join("records.csv").exists() && b.join("report.json").exists());

    let c = dir.path().join("cov");
    run(&["coverage", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    let hist = fs::read_to_string(c.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("coordinate,lo,hi,count,density"));
    assert!(c.join("results.csv").exists() && c.join("report.json").exists());
}

#[test]
fn benchmark_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&["benchmark", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run(&["benchmark", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    for f in ["results.csv", "records.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn invalid_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"n": 5}"#).unwrap();
    let out = bin().args(["fit", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n must be >= 20"));
}
