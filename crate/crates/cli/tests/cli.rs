use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn radial_config(task: &str, resolution: usize) -> Value {
    json!({
        "task": task,
        "domain": {
            "shape": "disk",
            "params": { "center": [0, 0], "radius": 1 },
            "R": 2.5,
            "mu": 3.0 * std::f64::consts::PI,
            "obstacles": { "kind": "constant", "params": { "lower": 1, "upper": 2 } }
        },
        "resolution": resolution,
        "penalty": { "eps": 0.05 }
    })
}

fn run(dir: &Path, cfg: &Value, extra: &[&str]) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_volobs"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--quiet")
        .args(extra)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = radial_config("solve", 65);
    cfg["field_format"] = json!("both");
    let out = run(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    for f in ["summary.json", "report.json", "u.csv", "u.bin", "contours.csv"] {
        assert!(o.join(f).exists(), "missing {f}");
    }
    let s = read_json(&o.join("summary.json"));
    assert_eq!(s["solve"]["converged"], true);
    assert_eq!(s["free_boundary"]["contours"]["type"], "FeatureCollection");
    let v = s["solve"]["exterior_volume"].as_f64().unwrap();
    assert!((v - 3.0 * std::f64::consts::PI).abs() < 0.05 * v);

    let csv = volobs_core::io::read_field_csv(fs::File::open(o.join("u.csv")).unwrap()).unwrap();
    let bin = volobs_core::io::read_field_bin(&fs::read(o.join("u.bin")).unwrap()).unwrap();
    assert_eq!(csv.values(), bin.values());
    assert_eq!((csv.grid().nx, csv.grid().ny), (bin.grid().nx, bin.grid().ny));
    assert!((csv.grid().h - bin.grid().h).abs() < 1e-12);
    assert!(fs::read_to_string(o.join("contours.csv")).unwrap().starts_with("chain_id,x,y\n"));
}

#[test]
fn summary_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = radial_config("solve", 49);
    assert_eq!(run(a.path(), &cfg, &["--seed", "7"]).status.code(), Some(0));
    assert_eq!(run(b.path(), &cfg, &["--seed", "7"]).status.code(), Some(0));
    let sa = fs::read(a.path().join("out/summary.json")).unwrap();
    let sb = fs::read(b.path().join("out/summary.json")).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(read_json(&a.path().join("out/summary.json"))["config"]["solver"]["seed"], 7);
}

#[test]
fn negative_mu_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = radial_config("solve", 65);
    cfg["domain"]["mu"] = json!(-1.0);
    let out = run(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(volobs_cli::EXIT_CONFIG));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("domain.mu"), "{err}");
    assert!(!dir.path().join("out/summary.json").exists());
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = radial_config("solve", 65);
    cfg["solver"] = json!({ "max_itres": 10 });
    let out = run(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(volobs_cli::EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.max_itres"));

    let out = Command::new(env!("CARGO_BIN_EXE_volobs"))
        .args(["--config", "/nonexistent/config.json", "--quiet"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(volobs_cli::EXIT_CONFIG));
}

#[test]
fn cold_sweep_reports_eps0() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = radial_config("sweep", 65);
    cfg["sweep"] = json!({ "eps": [0.5, 0.2, 0.1, 0.05, 0.02], "warm_start": false });
    let out = run(dir.path(), &cfg, &["--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&dir.path().join("out/summary.json"));
    assert_eq!(s["sweep"]["rows"].as_array().unwrap().len(), 5);
    assert!(s["sweep"]["eps0"].as_f64().is_some());
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert!(csv.starts_with("eps,exterior_volume,"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn verify_exit_code_follows_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = radial_config("verify", 65);
    cfg["verify"] = json!({ "resolutions": [33, 49, 65] });
    let out = run(dir.path(), &cfg, &["--jobs", "2"]);
    let report = read_json(&dir.path().join("out/report.json"));
    let pass = report["pass"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if pass { 0 } else { 1 }));
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for n in ["converged", "max_principle", "harmonicity", "volume_bound", "descent", "lambda_constancy", "euler_lagrange", "lipschitz"] {
        assert!(names.contains(&n), "missing {n} in {names:?}");
    }

    cfg["solver"] = json!({ "max_iters": 3 });
    let out = run(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(volobs_cli::EXIT_FAILED));
    cfg["task"] = json!("solve");
    let out = run(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn oracle_compare_on_the_radial_golden_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &radial_config("oracle-compare", 257), &[]);
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(out.status.code(), Some(0), "{report:#}");
    for n in ["oracle_energy", "oracle_volume", "oracle_lambda", "oracle_lambda_cv"] {
        let c = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == n).unwrap();
        assert_eq!(c["pass"], true, "{c}");
    }
}

#[test]
fn oracle_compare_rejects_non_radial_setups() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = radial_config("oracle-compare", 65);
    cfg["domain"]["params"]["center"] = json!([0.2, 0]);
    let out = run(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(volobs_cli::EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain.shape"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = volobs_core::config::RunConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}
