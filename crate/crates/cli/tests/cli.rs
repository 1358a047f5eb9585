use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use varinv::models::diffusion::{DiffusionProblem, DiffusionSolver, Forcing, SensorLayout};

fn varinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varinv")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let out = varinv(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every data row after the `# config_hash` line, split on commas.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    lines.skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

const LINEAR: &str = r#"{
  "problem": "linear-gaussian",
  "seed": 3,
  "linear_gaussian": {
    "design": [[1.0, 1.0], [1.0, -1.0], [2.0, 0.5]],
    "offset": [0.0, 0.1, -0.3],
    "observations": [1.2, 0.3, 2.0],
    "noise_sigma": 0.3,
    "prior_mean": [0.0, 0.0],
    "prior_variance": [1.0, 2.0]
  }
}"#;

#[test]
fn linear_gaussian_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lin.json", LINEAR);
    let out = dir.path().join("out");
    run_ok(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let summary = json(&out.join("summary.json"));
    let mixture = json(&out.join("mixture.json"));
    let hash = summary["config_hash"].as_str().unwrap().to_owned();
    assert_eq!(hash.len(), 64);
    assert_eq!(summary["seed"], 3);
    assert_eq!(mixture["config_hash"], hash.as_str());
    assert_eq!(mixture["mixture"]["L"], 1);
    for name in ["trace.csv", "density.csv"] {
        let first = std::fs::read_to_string(out.join(name)).unwrap().lines().next().unwrap().to_owned();
        assert_eq!(first, format!("# config_hash={hash} seed=3"));
    }
    assert!(!csv_rows(&out.join("trace.csv")).is_empty());
    assert_eq!(csv_rows(&out.join("density.csv")).len(), 2 * 201);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lin.json", LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run_ok(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    for name in ["summary.json", "mixture.json", "trace.csv", "density.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lin.json", LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run_ok(&["run", cfg.to_str().unwrap(), "--seed", "9", "--out", b.to_str().unwrap()]);
    let (sa, sb) = (json(&a.join("summary.json")), json(&b.join("summary.json")));
    assert_eq!(sb["seed"], 9);
    assert_ne!(sa["config_hash"], sb["config_hash"]);
}

#[test]
fn output_dir_defaults_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lin.json", LINEAR);
    run_ok(&["run", cfg.to_str().unwrap()]);
    assert!(dir.path().join("out").join("summary.json").is_file());
}

#[test]
fn catalysis_vi_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cat.json", r#"{"problem": "catalysis", "seed": 0}"#);
    run_ok(&["run", cfg.to_str().unwrap()]);
    let s = json(&dir.path().join("out").join("summary.json"));
    let xi1 = &s["parameters"][0];
    assert_eq!(xi1["name"], "xi1");
    assert!((xi1["mean"].as_f64().unwrap() - 1.359).abs() < 0.005);
    assert!((2.0 * xi1["std"].as_f64().unwrap() - 0.055).abs() < 0.01);
    let k1 = &s["derived"][0];
    assert_eq!(k1["name"], "k1");
    assert!((k1["median"].as_f64().unwrap() - 0.0216).abs() < 0.0003);
    assert!((k1["lower"].as_f64().unwrap() - 0.0205).abs() < 0.0003);
    assert!((k1["upper"].as_f64().unwrap() - 0.0229).abs() < 0.0003);
    assert_eq!(s["derived"][5]["name"], "sigma");
}

#[test]
fn mala_writes_chain_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let body = LINEAR.replace("\"seed\": 3,", "\"seed\": 3, \"method\": \"mala\", \"mala\": {\"dt\": 0.3},");
    let cfg = write_config(dir.path(), "mala.json", &body);
    run_ok(&["run", cfg.to_str().unwrap(), "--fast"]);
    let out = dir.path().join("out");
    let rows = csv_rows(&out.join("chain.csv"));
    let side = json(&out.join("chain.json"));
    assert_eq!(rows.len(), 950);
    assert_eq!(side["samples"], 950);
    assert_eq!(side["total"], 20000);
    let rate = side["acceptance_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    let first: Vec<f64> = rows[0].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(first.len(), 2);
}

#[test]
fn make_data_without_noise_matches_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "md.json",
        r#"{"problem": "diffusion-corners", "seed": 1, "diffusion": {"noise": 0.0, "truth_grid": 30}}"#,
    );
    run_ok(&["make-data", cfg.to_str().unwrap()]);
    let rows = csv_rows(&dir.path().join("out").join("data.csv"));
    let solver = DiffusionSolver::new(DiffusionProblem::with_layout(30, SensorLayout::Corners)).unwrap();
    let clean = solver.readings(&[0.09, 0.23], Forcing::Source).unwrap();
    assert_eq!(rows.len(), clean.len());
    for (r, c) in rows.iter().zip(&clean) {
        assert_eq!(r[2].parse::<f64>().unwrap(), *c);
    }
    let prov = json(&dir.path().join("out").join("data.json"));
    assert_eq!(prov["truth_grid"], 30);
    assert_eq!(prov["noise"], 0.0);
}

#[test]
fn make_data_is_deterministic_and_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let md = write_config(dir.path(), "md.json", r#"{"problem": "diffusion-midpoints", "seed": 4}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["make-data", md.to_str().unwrap(), "--fast", "--out", a.to_str().unwrap()]);
    run_ok(&["make-data", md.to_str().unwrap(), "--fast", "--out", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(a.join("data.csv")).unwrap(), std::fs::read(b.join("data.csv")).unwrap());

    let cfg = write_config(
        dir.path(),
        "fit.json",
        r#"{"problem": "diffusion-midpoints", "seed": 0, "fit": {"restarts": 2}, "diffusion": {"data": "a/data.csv"}}"#,
    );
    let out = dir.path().join("fit");
    run_ok(&["run", cfg.to_str().unwrap(), "--fast", "--out", out.to_str().unwrap()]);
    let s = json(&out.join("summary.json"));
    assert_eq!(s["parameters"][0]["name"], "x");
    assert_eq!(s["derived"][0]["name"], "sigma");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"problem": "catalysis"}"#,
        r#"{"problem": "catalysis", "seed": 1, "unknown": 2}"#,
        r#"{"problem": "nonsense", "seed": 1}"#,
        r#"{"problem": "linear-gaussian", "seed": 1}"#,
        r#"{"problem": "diffusion-corners", "seed": 1, "diffusion": {"data": "missing.csv"}}"#,
        r#"{"problem": "catalysis", "seed": 1, "fit": {"components": 0}}"#,
        "not json",
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), body);
        let out = varinv(&["run", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{body}");
        assert!(!out.stderr.is_empty());
    }
    let cfg = write_config(dir.path(), "cat.json", r#"{"problem": "catalysis", "seed": 1}"#);
    assert_eq!(varinv(&["make-data", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(varinv(&["run", "/nonexistent/config.json"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"problem": "catalysis", "seed": 1, "fit": {"restarts": 1, "init": {"fixed": [[800, 800, 800, 800, 800, 0]]}}}"#,
    );
    let out = varinv(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
