//! Trains a two-frame and a multi-frame model on synthetic video and compares their
//! 15-frame segment errors with the mean ground-truth motion.
//!
//! Usage: `cargo run --release --example compare_models [config.json] [steps]`

use objtrack::experiment::{run, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg: ExperimentConfig = match args.next() {
        Some(p) if p != "-" => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        _ => ExperimentConfig::default(),
    };
    if let Some(steps) = args.next() {
        cfg.train.steps = steps.parse()?;
    }
    let t0 = std::time::Instant::now();
    let report = run(&cfg, |line| eprintln!("[{:>6.1}s] {line}", t0.elapsed().as_secs_f64()))?;
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({
        "two_frame": report.two_frame,
        "multi_frame": report.multi_frame,
        "zero_motion": report.zero_motion,
        "train_windows": report.train_windows,
    }))?);
    Ok(())
}
