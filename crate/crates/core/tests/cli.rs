// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

fn qjump(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qjump"))
        .args(args)
        .current_dir(cwd)
        .env_remove("QJUMP_SEED")
        .output()
        .expect("spawn qjump")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_single_error(o: &Output, code: &str, exit: i32) {
    let err = stderr(o);
    assert_eq!(o.status.code(), Some(exit), "stderr: {err}");
    assert_eq!(err.lines().count(), 1, "stderr: {err}");
    assert!(err.starts_with(&format!("error: {code}: ")), "stderr: {err}");
}

#[test]
fn preset_list_names_every_shipped_preset() {
    let dir = tempfile::tempdir().unwrap();
    let o = qjump(&["preset", "list"], dir.path());
    assert!(o.status.success());
    let names: Vec<String> = String::from_utf8(o.stdout).unwrap().lines().map(String::from).collect();
    assert!(names.contains(&"dehmelt-v".to_string()));
    assert!(names.contains(&"mollow-strong".to_string()));
}

#[test]
fn unknown_preset_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_single_error(&qjump(&["preset", "show", "nope"], dir.path()), "CONFIG_SCHEMA", 2);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_single_error(&qjump(&["run", "absent.json"], dir.path()), "CONFIG_IO", 2);
}

#[test]
fn unknown_field_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"preset": "mollow-weak", "colour": "blue"}"#).unwrap();
    assert_single_error(&qjump(&["validate", "c.json"], dir.path()), "CONFIG_SCHEMA", 2);
}

#[test]
fn negative_decay_rate_is_a_range_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"preset": "mollow-weak", "atom": {"two_level": {"rabi": 0.1, "a": -1.0, "detuning": 0.0}}}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    assert_single_error(&qjump(&["validate", "c.json"], dir.path()), "CONFIG_RANGE", 2);
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_single_error(&qjump(&["run"], dir.path()), "USAGE", 2);
    assert_single_error(&qjump(&["frobnicate"], dir.path()), "USAGE", 2);
}

#[test]
fn failed_check_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"preset": "mollow-strong", "params": {"expect_maxima": 5}}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let o = qjump(&["run", "c.json", "--out", "out"], dir.path());
    assert_single_error(&o, "CHECK_FAILED", 4);
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn run_writes_manifest_with_output_hashes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"preset": "two-level-trajectories"}"#).unwrap();
    let o = qjump(&["run", "c.json", "--out", "out"], dir.path());
    assert!(o.status.success(), "stderr: {}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 10);
    assert!(outputs.iter().all(|o| o["sha256"].as_str().is_some_and(|h| h.len() == 64)));
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 10);
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"preset": "two-level-trajectories"}"#).unwrap();
    let run = |seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qjump"));
        cmd.args(["run", "c.json", "--out", out]).current_dir(dir.path()).env_remove("QJUMP_SEED");
        if let Some(s) = seed {
            cmd.env("QJUMP_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(out).join("traj_00000.jsonl")).unwrap()
    };
    assert_ne!(run(None, "a"), run(Some("99"), "b"));
    assert_eq!(run(Some("99"), "c"), run(Some("99"), "d"));
}

#[test]
fn segment_reads_a_trajectory_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"preset": "two-level-trajectories"}"#).unwrap();
    assert!(qjump(&["run", "c.json", "--out", "out"], dir.path()).status.success());
    let o = qjump(&["segment", "out/traj_00000.jsonl", "--t0", "2.0"], dir.path());
    assert!(o.status.success(), "stderr: {}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().count() >= 2, "{csv}");
}
