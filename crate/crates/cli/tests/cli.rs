use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn oversub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oversub"))
        .args(args)
        .env("OVERSUB_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = oversub(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A small cluster on the staggered-peaks preset, written to `dir/config.json`.
fn write_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "trace": {"kind": "preset", "name": "staggered_peaks", "seed": null},
        "env": {"cluster": {"num_pms": 10}},
        "learner": {"agent_hidden": [8], "cluster_hidden": [8]},
        "seeds": [0],
        "episodes": 2,
        "eval_episodes": 3,
        "out_dir": "runs"
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn comparison(out: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(out.join("comparison.csv"))
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn generate_is_deterministic_and_creates_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("deep/nested/a");
    let b = dir.path().join("b");
    ok(&["generate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["generate", "--config", s(&cfg), "--out", s(&b)]);
    for f in ["vms.csv", "usage.csv"] {
        let left = fs::read(a.join(f)).unwrap();
        assert!(!left.is_empty());
        assert_eq!(left, fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seeds"][0], 2022);
    let subs: std::collections::BTreeSet<String> = csv::Reader::from_path(a.join("vms.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap()[1].to_string())
        .collect();
    assert_eq!(subs.len(), 2);
}

#[test]
fn generate_seed_override_changes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["generate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["generate", "--config", s(&cfg), "--out", s(&b), "--seed", "9"]);
    assert_ne!(
        fs::read(a.join("usage.csv")).unwrap(),
        fs::read(b.join("usage.csv")).unwrap()
    );
    assert_eq!(read_json(&b.join("manifest.json"))["seeds"][0], 9);
}

#[test]
fn train_one_episode_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("train");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--episodes",
        "1",
        "--seed",
        "0,1,2",
        "--alpha",
        "0.95",
        "--plots",
    ]);
    for seed in 0..3 {
        assert!(out.join(format!("checkpoint_seed{seed}.json")).exists());
        let rows = csv::Reader::from_path(out.join(format!("curves_seed{seed}.csv")))
            .unwrap()
            .records()
            .count();
        assert_eq!(rows, 1);
        let summary = read_json(&out.join(format!("summary_seed{seed}.json")));
        assert!((summary["c"].as_f64().unwrap() - 0.00125).abs() < 1e-15);
        assert!(out.join(format!("hot_cluster_seed{seed}.svg")).exists());
    }
    let resolved = read_json(&out.join("resolved_config.json"));
    assert_eq!(resolved["episodes"], 1);
    assert_eq!(resolved["seeds"], serde_json::json!([0, 1, 2]));
}

#[test]
fn evaluate_grid_reports_exact_savings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--policy",
        "grid:0.4",
        "--episodes",
        "1",
    ]);
    let report = read_json(&out.join("eval_0_grid_0.4_seed0.json"));
    assert!((report["s_cores_mean"].as_f64().unwrap() - 60.0).abs() < 1e-9);
    assert_eq!(report["s_cores_std"].as_f64().unwrap(), 0.0);
    assert_eq!(report["episodes"], 1);
    let rows = csv::Reader::from_path(out.join("eval_0_grid_0.4_seed0.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, 1);
}

#[test]
fn evaluate_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("t");
    ok(&["train", "--config", s(&cfg), "--out", s(&out), "--episodes", "1"]);
    let spec = format!("c2marl:{}", s(&out.join("checkpoint_seed0.json")));
    ok(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--policy",
        &spec,
        "--policy",
        "sl",
    ]);
    let report = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| {
            let name = p.file_name().unwrap().to_str().unwrap();
            name.starts_with("eval_0_c2marl") && name.ends_with(".json")
        })
        .expect("c2marl report");
    let report = read_json(&report);
    assert_eq!(report["policy"].as_str().unwrap(), spec);
    assert!(report["s_cores_mean"].as_f64().unwrap().is_finite());
    assert!(out.join("eval_1_sl_seed0.json").exists());
}

#[test]
fn corrupted_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let ck = dir.path().join("bad.json");
    fs::write(&ck, "{\"version\": 99}").unwrap();
    let spec = format!("c2marl:{}", s(&ck));
    let out = oversub(&["evaluate", "--config", s(&cfg), "--policy", &spec]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("version"), "{err}");
    fs::write(&ck, "not json at all").unwrap();
    assert!(!oversub(&["evaluate", "--config", s(&cfg), "--policy", &spec])
        .status
        .success());
}

#[test]
fn compare_grid_rows_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("cmp");
    ok(&[
        "compare",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seed",
        "0,1",
        "--policy",
        "grid:0.2",
        "--policy",
        "grid:0.4",
        "--policy",
        "grid:0.6",
        "--policy",
        "grid:0.6",
        "--plots",
    ]);
    let rows = comparison(&out);
    assert_eq!(rows.len(), 4);
    for (row, expected) in rows.iter().zip([80.0, 60.0, 40.0, 40.0]) {
        let s_cores: f64 = row[3].parse().unwrap();
        assert!((s_cores - expected).abs() < 1e-9, "{row:?}");
    }
    let header = csv::Reader::from_path(out.join("comparison.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    for col in ["Method", "PM-Hot-R", "S-Cores", "Safe-0.75", "Safe-0.85", "Safe-0.95"] {
        assert!(cols.contains(&col), "{col}");
    }
    assert_eq!(
        rows[2].iter().skip(1).collect::<Vec<_>>(),
        rows[3].iter().skip(1).collect::<Vec<_>>()
    );
    assert!(out.join("s_cores.svg").exists());
}

#[test]
fn compare_without_policies_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = oversub(&["compare", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.json");
    fs::write(
        &cfg,
        r#"{"trace": {"kind": "preset", "name": "staggered_peaks", "seed": null}, "alpah": 0.9}"#,
    )
    .unwrap();
    assert!(!oversub(&["evaluate", "--config", s(&cfg), "--policy", "sl"])
        .status
        .success());
    let cfg = write_config(dir.path());
    assert!(!oversub(&["evaluate", "--config", s(&cfg), "--policy", "grid:2"])
        .status
        .success());
    assert!(
        !oversub(&["evaluate", "--config", "/nonexistent/c.json", "--policy", "sl"])
            .status
            .success()
    );
}

#[test]
fn resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    ok(&[
        "compare",
        "--config",
        s(&cfg),
        "--out",
        s(&first),
        "--policy",
        "sl",
        "--policy",
        "ma:24",
    ]);
    let resolved = first.join("resolved_config.json");
    ok(&[
        "compare",
        "--config",
        s(&resolved),
        "--out",
        s(&second),
        "--policy",
        "sl",
        "--policy",
        "ma:24",
    ]);
    for f in ["comparison.csv", "eval_0_sl_seed0.json", "eval_1_ma_24_seed0.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn relative_trace_paths_resolve_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("data"))]);
    let files_cfg = dir.path().join("files.json");
    fs::write(
        &files_cfg,
        r#"{"trace": {"kind": "files", "vms": "data/vms.csv", "usage": "data/usage.csv"},
            "env": {"cluster": {"num_pms": 10}}, "seeds": [0], "eval_episodes": 1}"#,
    )
    .unwrap();
    let out = dir.path().join("e");
    ok(&[
        "evaluate",
        "--config",
        s(&files_cfg),
        "--out",
        s(&out),
        "--policy",
        "grid:0.2",
    ]);
    let report = read_json(&out.join("eval_0_grid_0.2_seed0.json"));
    assert!((report["s_cores_mean"].as_f64().unwrap() - 80.0).abs() < 1e-9);
}
