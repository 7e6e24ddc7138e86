use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdisac_harness::ExperimentConfig;

fn fdisac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdisac")).args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::desk();
    cfg.runs = 2;
    cfg.ofdm.subcarriers = 32;
    cfg.ofdm.sense_symbols = 14;
    cfg.output_path = dir.join("out").to_string_lossy().into_owned();
    let path = dir.join("tiny.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("custom");
    let o = fdisac(&["run", "--config", &config, "--runs", "1", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["runs.csv", "targets.csv", "aggregate.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    // one run at two power points
    assert_eq!(runs.lines().count(), 3);
}

#[test]
fn sweep_replaces_power_points() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let o = fdisac(&["sweep", "--config", &config, "--power", "-10:10:10", "--runs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = fs::read_to_string(dir.path().join("out/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 4);
}

#[test]
fn scenario_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let scenario = dir.path().join("scenario.toml");
    let o = fdisac(&["scenario", "--config", &config, "--run", "1", "--out", scenario.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("replay");
    let o = fdisac(&[
        "replay",
        "--scenario",
        scenario.to_str().unwrap(),
        "--config",
        &config,
        "--power",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let spectrum = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("angle_deg,value\n"));
    assert_eq!(spectrum.lines().count(), 1802);
    let dump = fs::read_to_string(out.join("optimizer.toml")).unwrap();
    assert!(dump.contains("tx_beams"));
}

#[test]
fn preset_output_loads() {
    let o = fdisac(&["preset", "desk"]);
    assert!(o.status.success());
    let cfg = ExperimentConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::desk());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert!(!fdisac(&["run", "--config", missing.to_str().unwrap()]).status.success());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "runs = 0\n").unwrap();
    assert!(!fdisac(&["run", "--config", bad.to_str().unwrap()]).status.success());

    let config = tiny_config(dir.path());
    assert!(!fdisac(&["sweep", "--config", &config, "--power", "10:0:20"]).status.success());

    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("out");
    assert!(!fdisac(&["run", "--config", &config, "--out", out.to_str().unwrap()]).status.success());

    assert!(!fdisac(&["replay", "--scenario", missing.to_str().unwrap()]).status.success());
    assert!(!fdisac(&["preset", "nope"]).status.success());
}
