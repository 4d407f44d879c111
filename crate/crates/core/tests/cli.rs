//! The `kinetic-chain` binary: exit codes, artifacts and config errors.

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinetic-chain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn constants_writes_record_and_populated_constants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cli(&["constants", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for id in 1..=4 {
        assert!(stdout.contains(&format!("criterion {id:>2}")), "missing criterion {id}");
    }
    let record = read_json(&out.join("run_record.json"));
    assert_eq!(record["kind"], "constants");
    assert_eq!(record["criteria"].as_array().unwrap().len(), 4);
    assert!(!record["manifest"].as_array().unwrap().is_empty());
    let c = read_json(&out.join("constants.json"));
    for key in [
        "theta_bar",
        "spectral_gap",
        "theta_tail_index",
        "psi_tail_index",
        "c_star_plus",
        "c_star_minus",
        "c_star_asymptotic",
        "c_hat_pipeline",
        "delta_star",
    ] {
        assert!(c[key].is_f64(), "{key} not populated: {}", c[key]);
    }
    assert!((c["c_star_plus"].as_f64().unwrap() - 0.4548118702).abs() < 1e-6);
    assert!((c["theta_bar"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn pinned_constants_fill_the_gaussian_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pinned.toml");
    std::fs::write(
        &cfg,
        "kind = \"constants\"\nseed = 3\n\n[model]\nfamily = \"pinned-nn\"\npinning_mass = 1.0\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = cli(&[
        "constants",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let c = read_json(&out.join("constants.json"));
    for key in [
        "sigma_sq",
        "c_hat_gaussian_a",
        "c_hat_gaussian_b",
        "gaussian_renewal_variance",
    ] {
        assert!(c[key].is_f64(), "{key} not populated: {}", c[key]);
    }
    assert!(c["c_star_plus"].is_null());
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n\n[kinetic]\npanels_per_sid = 10\n").unwrap();
    let o = cli(&[
        "kinetic-solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("panels_per_sid"));
}

#[test]
fn kind_clash_and_missing_seed_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("clash.toml");
    std::fs::write(&cfg, "kind = \"semigroup\"\nseed = 1\n").unwrap();
    let out = dir.path().join("x");
    let o = cli(&[
        "constants",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, "kind = \"constants\"\n").unwrap();
    let o = cli(&[
        "constants",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn failing_criterion_exits_1_with_report() {
    // the a = 1 decay slope sits outside its band over the measured window
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cli(&["semigroup", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert!(out.join("report.txt").exists());
    assert!(out.join("run_record.json").exists());
}
