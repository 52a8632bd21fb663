use std::path::{Path, PathBuf};
use std::process::Command;

use objtrack::io::{read_json, read_poses, TrajectoryFile, TrajectoryStatus};
use objtrack::metrics::MetricReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_objtrack"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn synth(dir: &Path, name: &str, cfg: &str) -> PathBuf {
    let c = dir.join(format!("{name}.json"));
    write(&c, cfg);
    let out = dir.join(name);
    let st = bin()
        .args(["synth-gen", "--config"])
        .arg(&c)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    out
}

#[test]
fn synth_gen_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"protocol": "modelnet_pair", "count": 2, "seed": 11, "width": 64, "height": 64}"#;
    let a = synth(dir.path(), "a", cfg);
    let b = synth(dir.path(), "b", cfg);
    assert!(a.join("seq_00000").is_dir() && a.join("seq_00001").is_dir());
    assert!(!a.join("seq_00002").exists());
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("seq_00001/frames/000001.png")).unwrap(),
        std::fs::read(b.join("seq_00001/frames/000001.png")).unwrap()
    );
}

#[test]
fn synth_gen_missing_seed_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.json");
    write(&c, r#"{"protocol": "modelnet_pair", "count": 1}"#);
    let out = bin()
        .args(["synth-gen", "--config"])
        .arg(&c)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn data_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.json");
    write(&c, r#"{"protocol": "modelnet_pair", "count": 1, "seed": 1, "width": 32, "height": 32}"#);
    let root = dir.path().join("root");
    let st = bin()
        .env("OBJTRACK_DATA", &root)
        .args(["synth-gen", "--config"])
        .arg(&c)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(root.join("manifest.json").is_file());
}

fn video(dir: &Path, length: usize) -> PathBuf {
    let cfg = format!(r#"{{"protocol": "shapenet_video", "count": 1, "seed": 5, "length": {length}}}"#);
    synth(dir, "video", &cfg).join("seq_00000")
}

fn track(seq: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .args(["track", "--sequence"])
        .arg(seq)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn oracle_track_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let seq = video(dir.path(), 20);
    let gt = read_poses(&seq.join("poses.json")).unwrap();

    let traj_path = dir.path().join("oracle.json");
    let out = track(&seq, &traj_path, &["--oracle-predictor", "--gt-init"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj: TrajectoryFile = read_json(&traj_path).unwrap();
    assert_eq!(traj.status, TrajectoryStatus::Complete);
    for (p, g) in traj.poses().unwrap().iter().zip(&gt) {
        assert!((p.translation - g.translation).norm() < 1e-5);
    }

    let doubled_path = dir.path().join("z.json");
    let base_path = dir.path().join("base.json");
    assert!(track(&seq, &base_path, &["--oracle-predictor", "--z0", "700"]).status.success());
    assert!(track(&seq, &doubled_path, &["--oracle-predictor", "--z0", "1400"]).status.success());
    let base: TrajectoryFile = read_json(&base_path).unwrap();
    let doubled: TrajectoryFile = read_json(&doubled_path).unwrap();
    for (a, b) in base.poses().unwrap().iter().zip(doubled.poses().unwrap()) {
        assert!((b.translation - 2.0 * a.translation).norm() <= 1e-9 * b.translation.norm());
    }

    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["eval", "--trajectory"])
        .arg(&traj_path)
        .arg("--sequence")
        .arg(&seq)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ADD"));
    let report: MetricReport = read_json(&report_path).unwrap();
    assert_eq!(report.aggregate.acc_add, 1.0);
    assert_eq!(report.aggregate.acc_k_deg_k_cm, 1.0);
    assert!(report.aggregate.mean_translation_mm < 1e-5);

    let plots = dir.path().join("plots");
    let st = bin()
        .args(["plot", "--reports"])
        .arg(&report_path)
        .arg("--out")
        .arg(&plots)
        .status()
        .unwrap();
    assert!(st.success());
    let first = std::fs::read(plots.join("rotation_error.svg")).unwrap();
    assert!(plots.join("translation_error.svg").is_file());
    bin().args(["plot", "--reports"]).arg(&report_path).arg("--out").arg(&plots).status().unwrap();
    assert_eq!(std::fs::read(plots.join("rotation_error.svg")).unwrap(), first);
}

#[test]
fn eval_length_mismatch_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = video(dir.path(), 6);
    let traj_path = dir.path().join("t.json");
    assert!(track(&seq, &traj_path, &["--oracle-predictor"]).status.success());
    let mut traj: TrajectoryFile = read_json(&traj_path).unwrap();
    traj.frames.pop();
    objtrack::io::write_json_atomic(&traj_path, &traj).unwrap();
    let out = bin()
        .args(["eval", "--trajectory"])
        .arg(&traj_path)
        .arg("--sequence")
        .arg(&seq)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_frame_sequence_gives_two_poses() {
    let dir = tempfile::tempdir().unwrap();
    let seq = video(dir.path(), 2);
    let p = dir.path().join("t.json");
    assert!(track(&seq, &p, &["--oracle-predictor"]).status.success());
    let traj: TrajectoryFile = read_json(&p).unwrap();
    assert_eq!(traj.frames.len(), 2);
}

#[test]
fn lost_track_writes_partial_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let seq = video(dir.path(), 6);
    // blank out the mask of frame 3 so propagation finds nothing
    let blank = image::GrayImage::new(128, 128);
    blank.save(seq.join("masks/000003.png")).unwrap();
    let p = dir.path().join("t.json");
    let out = track(&seq, &p, &["--oracle-predictor"]);
    assert_eq!(out.status.code(), Some(3));
    let traj: TrajectoryFile = read_json(&p).unwrap();
    assert_eq!(traj.status, TrajectoryStatus::Lost);
    assert_eq!(traj.frames.len(), 3);
}

#[test]
fn train_writes_checkpoint_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "train",
        r#"{"protocol": "shapenet_video", "count": 2, "seed": 3, "length": 6}"#,
    );
    let cfg = dir.path().join("t.json");
    write(
        &cfg,
        r#"{"model": "multi_frame", "window": 5, "steps": 3, "seed": 4, "batch_size": 4,
            "encoder": {"input_size": 16, "embed_dim": 16, "stem_width": 4,
                        "stages": [{"width": 8, "blocks": 1, "stride": 2}], "pool_grid": 1},
            "transformer": {"layers": 1, "heads": 2, "ff_width": 16, "max_len": 8},
            "regressor": {"hidden": [16, 8]}}"#,
    );
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let o = bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .args(extra)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a.ckpt", &[]);
    let b = run("b.ckpt", &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log_a = std::fs::read_to_string(dir.path().join("a.ckpt.loss.csv")).unwrap();
    assert_eq!(log_a.lines().count(), 4);
    assert_eq!(log_a, std::fs::read_to_string(dir.path().join("b.ckpt.loss.csv")).unwrap());

    let two = run("two.ckpt", &["--model", "two_frame", "--window", "2"]);
    let seq = data.join("seq_00000");
    let traj = dir.path().join("net.json");
    let o = track(&seq, &traj, &["--checkpoint", two.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t: TrajectoryFile = read_json(&traj).unwrap();
    assert_eq!(t.frames.len(), 6);
    assert_eq!(t.predictor, "network");
}

#[test]
fn track_without_checkpoint_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = video(dir.path(), 3);
    let out = track(&seq, &dir.path().join("t.json"), &[]);
    assert_eq!(out.status.code(), Some(2));
}
