//! Shipped JSON schemas accept what the tool writes and reject malformed input.

use std::path::{Path, PathBuf};
use std::process::Command;

use objtrack::metrics::MetricsConfig;
use serde_json::{json, Value};

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

/// Resolves cross-file references inside the schema directory.
struct LocalFiles;

impl jsonschema::Retrieve for LocalFiles {
    fn retrieve(&self, uri: &jsonschema::Uri<String>) -> Result<Value, Box<dyn std::error::Error + Send + Sync>> {
        Ok(serde_json::from_str(&std::fs::read_to_string(uri.path().as_str())?)?)
    }
}

fn schema(name: &str) -> jsonschema::Validator {
    let s = load(&schema_dir().join(format!("{name}.schema.json")));
    jsonschema::options()
        .with_base_uri(format!("file://{}/", schema_dir().display()))
        .with_retriever(LocalFiles)
        .build(&s)
        .unwrap()
}

fn load(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check(name: &str, v: &Value) {
    let errors: Vec<String> = schema(name).iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn run(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_objtrack")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn written_files_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = json!({"protocol": "shapenet_video", "count": 1, "seed": 9, "length": 8});
    check("dataset_config", &cfg);
    std::fs::write(d.join("data.json"), cfg.to_string()).unwrap();
    run(&["synth-gen", "--config", "data.json", "--out", "data"], d);
    let seq = d.join("data/seq_00000");
    check("sequence_meta", &load(&seq.join("meta.json")));
    check("pose_records", &load(&seq.join("poses.json")));

    let seq_s = seq.to_str().unwrap();
    run(&["track", "--sequence", seq_s, "--out", "traj.json", "--oracle-predictor"], d);
    check("trajectory", &load(&d.join("traj.json")));
    run(&["eval", "--trajectory", "traj.json", "--sequence", seq_s, "--out", "report.json"], d);
    check("metric_report", &load(&d.join("report.json")));
    check("metrics_config", &serde_json::to_value(MetricsConfig::default()).unwrap());
    check(
        "train_config",
        &json!({"model": "multi_frame", "window": 4, "steps": 10, "seed": 1, "batch_size": 8}),
    );
}

#[test]
fn schemas_reject_malformed_documents() {
    assert!(!schema("dataset_config").is_valid(&json!({"protocol": "shapenet_video", "count": 1})));
    assert!(!schema("pose_records").is_valid(&json!([{"frame": 0, "R": [1, 0, 0], "T": [0, 0, 1]}])));
    assert!(!schema("metrics_config").is_valid(&json!({"k_deg": 5, "unknown": 1})));
    assert!(!schema("train_config").is_valid(&json!({"model": "three_frame"})));
    assert!(!schema("trajectory").is_valid(&json!({"status": "drifting"})));
}
