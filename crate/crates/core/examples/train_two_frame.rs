//! Trains a small two-frame model for a few hundred steps, saves it, reloads it and
//! compares held-out predictions with the ground-truth codes.
//!
//! Usage: `cargo run --release --example train_two_frame [steps]`

use objtrack::experiment::{generate, windows, ExperimentConfig};
use objtrack::models::{checkpoint, predict_windows, train_with, ModelConfig, MotionModel, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let exp = ExperimentConfig {
        train_sequences: 60,
        test_sequences: 5,
        ..ExperimentConfig::default()
    };
    let train_data = windows(&generate(&exp.train_specs(), &exp.synth)?, 2, 32)?;
    let test_data = windows(&generate(&exp.test_specs(), &exp.synth)?, 2, 32)?;

    let mut model = MotionModel::<f32>::new(&ModelConfig::two_frame(), 0)?;
    println!("{} parameters, {} training windows", model.store.num_params(), train_data.len());
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    train_with(&mut model, &train_data, &cfg, |step, loss| {
        if step % 50 == 0 {
            println!("step {step:>4}: {:.5}", loss.total);
        }
    })?;

    let path = std::env::temp_dir().join("two_frame_example.ckpt");
    checkpoint::save(&path, &model, steps, Some(&cfg))?;
    let (mut reloaded, header) = checkpoint::load::<f32>(&path)?;
    println!("reloaded {} ({} tensors)", path.display(), header.tensors.len());

    let pred = predict_windows(&mut reloaded, &test_data[..4], 4)?;
    for (p, w) in pred.iter().zip(&test_data) {
        println!("pred omega {:+.3?}  true {:+.3?}", p.omega, w.target.omega);
    }
    Ok(())
}
