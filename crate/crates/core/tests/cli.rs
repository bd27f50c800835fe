use std::path::Path;
use std::process::{Command, Output};

use candle_core::Device;
use fplab::domain::read_manifest;
use fplab::pipeline::random_bundle;

fn fplab(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fplab"));
    cmd.args(args).env("FPLAB_LOG", "error");
    for var in ["FPLAB_CONFIG", "FPLAB_SEED", "FPLAB_OUT", "FPLAB_DEVICE", "FPLAB_BUNDLE"] {
        cmd.env_remove(var);
    }
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("fplab binary runs")
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is one JSON object");
    v["error"]["kind"].as_str().expect("error kind").to_string()
}

fn score_files(dir: &Path) -> (String, String) {
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    std::fs::write(&a, "score\n1\n2\n3\n").unwrap();
    std::fs::write(&b, "score\n2\n3\n4\n").unwrap();
    (a.display().to_string(), b.display().to_string())
}

#[test]
fn ks_prints_the_statistic_and_writes_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = score_files(dir.path());
    let out_dir = dir.path().join("run");
    let out = fplab(&["--out", out_dir.to_str().unwrap(), "ks", "--a", &a, "--b", &b], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("D=0.333333"));
    assert!(out_dir.join("ks.json").exists());
    assert!(out_dir.join("ks.config.toml").exists());
    assert!(!out_dir.join(".fplab.lock").exists());
}

#[test]
fn runs_replay_from_their_snapshot_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = score_files(dir.path());
    let first = dir.path().join("first");
    let out = fplab(&["--out", first.to_str().unwrap(), "ks", "--a", &a, "--b", &b], &[]);
    assert!(out.status.success());
    let snapshot = std::fs::read_to_string(first.join("ks.config.toml")).unwrap();
    let second = dir.path().join("second");
    let replay = dir.path().join("replay.toml");
    std::fs::write(&replay, snapshot.replace(first.to_str().unwrap(), second.to_str().unwrap())).unwrap();
    let out = fplab(&["--config", replay.to_str().unwrap(), "ks"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(first.join("ks.json")).unwrap(),
        std::fs::read_to_string(second.join("ks.json")).unwrap()
    );
}

#[test]
fn flags_override_environment_which_overrides_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = score_files(dir.path());
    let from_file = dir.path().join("from_file");
    let from_env = dir.path().join("from_env");
    let from_flag = dir.path().join("from_flag");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, format!("out = {:?}\n", from_file.display().to_string())).unwrap();
    let c = cfg.to_str().unwrap();

    let out = fplab(&["--config", c, "ks", "--a", &a, "--b", &b], &[]);
    assert!(out.status.success());
    assert!(from_file.join("ks.json").exists());

    let out = fplab(&["--config", c, "ks", "--a", &a, "--b", &b], &[("FPLAB_OUT", &from_env)]);
    assert!(out.status.success());
    assert!(from_env.join("ks.json").exists());

    let out = fplab(
        &["--config", c, "--out", from_flag.to_str().unwrap(), "ks", "--a", &a, "--b", &b],
        &[("FPLAB_OUT", &from_env)],
    );
    assert!(out.status.success());
    assert!(from_flag.join("ks.json").exists());
}

#[test]
fn unknown_config_keys_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    let out = fplab(&["--config", cfg.to_str().unwrap(), "report"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn usage_errors_exit_with_two() {
    let out = fplab(&["synth", "--bogus"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = fplab(&["--out", dir.path().to_str().unwrap(), "synth"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
    let out = fplab(&["--out", dir.path().to_str().unwrap(), "--device", "gpu", "report"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_report_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = fplab(
        &["--out", dir.path().to_str().unwrap(), "ks", "--a", missing.to_str().unwrap(), "--b", missing.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");
}

#[test]
fn a_held_lock_rejects_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".fplab.lock"), "").unwrap();
    let out = fplab(&["--out", dir.path().to_str().unwrap(), "report"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "path_collision");
}

#[test]
fn synth_is_seeded_and_report_lists_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    random_bundle(5, &Device::Cpu).unwrap().save(&bundle).unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = fplab(
            &["--out", out_dir.to_str().unwrap(), "--seed", "7", "synth", "--ids", "2", "--imps", "3"],
            &[("FPLAB_BUNDLE", &bundle)],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        read_manifest(&out_dir.join("manifest.jsonl")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.len(), 6);
    assert_eq!(a.records, b.records);

    let out = fplab(&["--out", dir.path().join("a").to_str().unwrap(), "report"], &[]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.path().join("a").join("report.md")).unwrap();
    assert!(report.contains("Missing inputs"));
}
