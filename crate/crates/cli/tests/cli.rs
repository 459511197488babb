//! Format contracts, exit codes and stage isolation of the `uplift` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn uplift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uplift"))
        .args(args)
        .env_remove("UPLIFT_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = uplift(args);
    assert!(
        out.status.success(),
        "uplift {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&[
        "simulate",
        "--d",
        "5",
        "--n",
        "2000",
        "--seed",
        "7",
        "--out",
        p(&data),
    ]);
    let text = fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "f0,f1,f2,f3,f4,treatment,outcome,tau_true"
    );
    assert_eq!(lines.count(), 2000);
}

#[test]
fn structure_writes_acyclic_adjacency_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let dag = dir.path().join("dag.json");
    ok(&[
        "simulate",
        "--d",
        "5",
        "--n",
        "500",
        "--seed",
        "7",
        "--out",
        p(&data),
    ]);
    ok(&["structure", "--data", p(&data), "--out", p(&dag)]);
    let v = json(&dag);
    assert!(v["score"].as_f64().unwrap().is_finite());
    let adj: Vec<Vec<u8>> = serde_json::from_value(v["adj"].clone()).unwrap();
    assert_eq!(adj.len(), 5);
    assert!(uplift_core::structure::is_acyclic(&adj));
    assert!(dir.path().join("adjacency.csv").exists());
    assert!(dir.path().join("dag.txt").exists());
}

#[test]
fn missing_upstream_artifact_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let out = uplift(&[
        "evaluate",
        "--pred",
        p(&missing),
        "--data",
        p(&missing),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn config_without_seed_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        serde_json::json!({"output_dir": out_dir, "dataset": {"synthetic": {"n": 100, "d": 5}}})
            .to_string(),
    )
    .unwrap();
    let out = uplift(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn non_binary_treatment_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    fs::write(&raw, "a,treatment,conversion\n0.1,1,0\n0.2,2,1\n").unwrap();
    let mapping = dir.path().join("mapping.json");
    fs::write(&mapping, r#"{"features": ["a"]}"#).unwrap();
    let out = uplift(&[
        "ingest",
        "--input",
        p(&raw),
        "--mapping",
        p(&mapping),
        "--out",
        p(&dir.path().join("data.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

fn write_section(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, value.to_string()).unwrap();
    path
}

/// The pipeline and the subcommands run by hand in the same order, with the
/// same seed and section parameters, produce identical artifacts.
#[test]
fn pipeline_equals_manual_stages() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let teacher = serde_json::json!({"n_rounds": 30});
    let gcn = serde_json::json!({"epochs": 5, "hidden": 8, "readout_hidden": 8});
    let cfg = write_section(
        root,
        "cfg.json",
        serde_json::json!({
            "seed": 11,
            "output_dir": root.join("auto"),
            "dataset": {"synthetic": {"n": 300, "d": 5}},
            "teacher": teacher,
            "gcn": gcn,
        }),
    );
    ok(&["pipeline", "--config", p(&cfg)]);
    let auto = root.join("auto");

    let m = root.join("manual");
    fs::create_dir_all(&m).unwrap();
    let f = |name: &str| m.join(name);
    let teacher_params = write_section(root, "teacher.json", teacher);
    let gcn_params = write_section(root, "gcn.json", gcn);
    ok(&[
        "simulate",
        "--d",
        "5",
        "--n",
        "300",
        "--seed",
        "11",
        "--out",
        p(&f("data.csv")),
    ]);
    ok(&[
        "split",
        "--data",
        p(&f("data.csv")),
        "--seed",
        "11",
        "--train-out",
        p(&f("train.csv")),
        "--test-out",
        p(&f("test.csv")),
    ]);
    ok(&[
        "distill",
        "--data",
        p(&f("train.csv")),
        "--params",
        p(&teacher_params),
        "--model-out",
        p(&f("teacher.json")),
        "--soft-out",
        p(&f("soft_labels.csv")),
    ]);
    ok(&[
        "cate",
        "--data",
        p(&f("train.csv")),
        "--soft",
        p(&f("soft_labels.csv")),
        "--seed",
        "11",
        "--model-out",
        p(&f("cate.json")),
        "--weights-out",
        p(&f("weights.csv")),
    ]);
    ok(&[
        "structure",
        "--data",
        p(&f("train.csv")),
        "--seed",
        "11",
        "--out",
        p(&f("dag.json")),
    ]);
    ok(&[
        "train",
        "--data",
        p(&f("train.csv")),
        "--dag",
        p(&f("dag.json")),
        "--cate",
        p(&f("cate.json")),
        "--seed",
        "11",
        "--params",
        p(&gcn_params),
        "--out",
        p(&f("gcn_causal.json")),
    ]);
    ok(&[
        "predict",
        "--model",
        p(&f("gcn_causal.json")),
        "--data",
        p(&f("test.csv")),
        "--cate",
        p(&f("cate.json")),
        "--out",
        p(&f("predictions_causal.csv")),
    ]);
    ok(&[
        "evaluate",
        "--pred",
        p(&f("predictions_causal.csv")),
        "--data",
        p(&f("test.csv")),
        "--out",
        p(&f("report.json")),
    ]);

    for name in [
        "data.csv",
        "train.csv",
        "test.csv",
        "teacher.json",
        "soft_labels.csv",
        "cate.json",
        "weights.csv",
        "cate_summary.json",
        "dag.json",
        "dag.txt",
        "adjacency.csv",
        "gcn_causal.json",
        "predictions_causal.csv",
    ] {
        assert_eq!(
            fs::read(auto.join(name)).unwrap(),
            fs::read(f(name)).unwrap(),
            "{name} differs between pipeline and manual stages"
        );
    }
    let (a, b) = (json(&auto.join("report.json")), json(&f("report.json")));
    for key in ["mse_y", "abs_ite", "auuc_raw", "auuc_norm", "group_sizes"] {
        assert_eq!(a[key], b[key], "{key}");
    }
}
