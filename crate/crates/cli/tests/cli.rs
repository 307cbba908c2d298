use std::fs;
use std::path::Path;

use assert_cmd::Command;

fn stdout_of(a: &assert_cmd::assert::Assert) -> String {
    String::from_utf8_lossy(&a.get_output().stdout).into_owned()
}

fn acgap() -> Command {
    Command::cargo_bin("acgap").unwrap()
}

const TINY_SAMPLE: &str = r#"{
  "mode": "sample",
  "env": {"kind": "random", "n_states": 3, "n_actions": 2, "gamma": 0.9, "seed": 1},
  "agents": [
    {"sample": {"algorithm": "ActorO", "episodes": 4, "episode_length": 15, "batch_size": 8}},
    {"sample": {"algorithm": "ResAC", "episodes": 4, "episode_length": 15, "batch_size": 8}}
  ],
  "seeds": [0, 1]
}"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_traces_aggregates_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", TINY_SAMPLE);
    let out = dir.path().join("out");
    acgap()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seeds", "3,4,5", "--jobs", "2"])
        .assert()
        .success();
    for agent in ["ActorO", "ResAC"] {
        for seed in [3, 4, 5] {
            assert!(out.join(format!("traces/{agent}_seed{seed}.csv")).exists());
        }
        assert!(out.join(format!("aggregate/{agent}.csv")).exists());
    }
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"version\""));
    assert!(manifest.contains("\"seeds\""));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", TINY_SAMPLE);
    for sub in ["a", "b"] {
        acgap().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(sub)).assert().success();
    }
    for f in ["traces/ResAC_seed1.csv", "aggregate/ActorO.csv", "manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn agent_filter_selects_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", TINY_SAMPLE);
    let out = dir.path().join("out");
    acgap()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--agent", "ResAC"])
        .assert()
        .success();
    assert!(out.join("aggregate/ResAC.csv").exists());
    assert!(!out.join("aggregate/ActorO.csv").exists());
    acgap()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--agent", "Nope"])
        .assert()
        .code(2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad_json = write(dir.path(), "bad.json", "{ not json");
    acgap().args(["run", "--config"]).arg(&bad_json).arg("--out").arg(&out).assert().code(2);
    let unknown = write(dir.path(), "unknown.json", r#"{"mode": "dp", "whatever": 1}"#);
    acgap().args(["run", "--config"]).arg(&unknown).arg("--out").arg(&out).assert().code(2);
    let bad_lr = write(
        dir.path(),
        "lr.json",
        r#"{"mode": "sample", "agents": [{"sample": {"algorithm": "ActorG", "actor_lr": -1}}]}"#,
    );
    acgap().args(["run", "--config"]).arg(&bad_lr).arg("--out").arg(&out).assert().code(2);
    // Rejected before any run starts.
    assert!(!out.join("traces").exists());
    acgap().args(["run", "--config"]).arg(dir.path().join("missing.json")).arg("--out").arg(&out).assert().code(2);
    acgap().args(["run", "--preset", "sample"]).assert().code(2);
    acgap().args(["frobnicate"]).assert().code(2);
}

#[test]
fn verify_passes_and_fails_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(
        dir.path(),
        "ok.json",
        r#"{"mode": "verify", "verify": {"seed_end": 8, "bias_instances": [0], "bias": {"eta": 0.5, "repetitions": 2, "seed": 0}}}"#,
    );
    let a = acgap().args(["verify", "--config"]).arg(&ok).assert().success();
    assert!(stdout_of(&a).contains("ALL PASS"));
    let strict = write(
        dir.path(),
        "strict.json",
        r#"{"mode": "verify", "verify": {"seed_end": 4, "bias_instances": [],
            "tolerances": {"closed_form": 0, "finite_difference": 0, "stackelberg": 0, "eta_limit": 0, "scalar_gap": 0}}}"#,
    );
    let a = acgap().args(["verify", "--json", "--config"]).arg(&strict).assert().code(1);
    assert!(stdout_of(&a).contains("\"pass\": false"));
}

#[test]
fn summarize_reports_ties_and_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a_seed0.csv", "iteration,J,J_q,J_w\n0,0,0,\n1,1,1,\n");
    let b = write(dir.path(), "b_seed0.csv", "iteration,J,J_q,J_w\n0,1,1,\n1,1,1,\n");
    let out = acgap().arg("summarize").arg(&a).arg(&b).arg("--own-final").assert().success();
    assert!(stdout_of(&out).contains("a = b"));
    let odd = write(dir.path(), "c_seed0.csv", "episode,exact_J\n0,1\n");
    acgap().arg("summarize").arg(&a).arg(&odd).assert().code(2);
    let misnamed = write(dir.path(), "plain.csv", "iteration,J,J_q,J_w\n0,1,1,\n");
    acgap().arg("summarize").arg(&misnamed).assert().code(2);
}

#[test]
fn dry_run_prints_table_defaults() {
    let a = acgap().args(["run", "--preset", "sample", "--dry-run"]).assert().success();
    let text = stdout_of(&a);
    assert!(text.contains("\"eta\": 0.5"));
    assert!(text.contains("\"batch_size\": 300"));
}
