//! Scaled-down two-frame vs. multi-frame comparison on synthetic video.
//!
//! Both models train on windows cut from the same video-protocol sequences and are
//! evaluated by tracking held-out sequences from a ground-truth start, with exact flow
//! and oracle masks, and reading the per-segment errors against the mean motion.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Pose;
use crate::nn::AdamConfig;
use crate::metrics::{segment_errors, SegmentReport};
use crate::models::{
    train_with, windows_from_sequence, EncoderConfig, ModelConfig, MotionModel, TrainConfig, TrainReport, Window,
    WindowConfig,
};
use crate::segmask::{BoxPadding, OracleFlow, OracleMaskRefiner};
use crate::synth::{derive_seed, generate_sequence, Protocol, SequenceSpec, SynthConfig, SyntheticSequence};
use crate::tracker::{track_sequence, MotionPredictor, NetworkPredictor, TrackerConfig, TrackerInit, ZeroPredictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub image_size: usize,
    pub train_sequences: usize,
    pub train_length: usize,
    pub test_sequences: usize,
    pub test_length: usize,
    /// Frames per multi-frame window.
    pub window: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            image_size: 128,
            train_sequences: 3000,
            train_length: 9,
            test_sequences: 50,
            test_length: 15,
            window: 4,
            encoder: EncoderConfig::default(),
            train: TrainConfig {
                steps: 4000,
                adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
                final_lr_fraction: 0.05,
                ..TrainConfig::default()
            },
            synth: SynthConfig { num_points: 1200, ..SynthConfig::default() },
        }
    }
}

impl ExperimentConfig {
    pub fn model(&self, multi_frame: bool) -> ModelConfig {
        let mut m = if multi_frame {
            ModelConfig::multi_frame(self.window)
        } else {
            ModelConfig::two_frame()
        };
        m.encoder = self.encoder.clone();
        m
    }

    fn spec(&self, seed: u64, length: usize) -> SequenceSpec {
        let mut s = SequenceSpec::new(Protocol::ShapenetVideo, seed);
        s.length = length;
        s.width = self.image_size;
        s.height = self.image_size;
        s.intrinsics = crate::synth::default_intrinsics(self.image_size, self.image_size);
        s
    }

    pub fn train_specs(&self) -> Vec<SequenceSpec> {
        (0..self.train_sequences)
            .map(|i| self.spec(derive_seed(self.seed, i as u64), self.train_length))
            .collect()
    }

    /// Held-out specs, seeded from a disjoint index range.
    pub fn test_specs(&self) -> Vec<SequenceSpec> {
        (0..self.test_sequences)
            .map(|i| self.spec(derive_seed(self.seed, (1 << 32) + i as u64), self.test_length))
            .collect()
    }
}

/// Mean segment errors of one predictor over the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub rotation_deg: f64,
    pub translation_mm: f64,
    pub baseline_rotation_deg: f64,
    pub baseline_translation_mm: f64,
    pub sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub train_windows: usize,
    pub two_frame: SegmentSummary,
    pub multi_frame: SegmentSummary,
    pub zero_motion: SegmentSummary,
    pub two_frame_loss: Vec<f64>,
    pub multi_frame_loss: Vec<f64>,
}

pub fn generate(specs: &[SequenceSpec], synth: &SynthConfig) -> Result<Vec<SyntheticSequence>> {
    specs.iter().map(|s| generate_sequence(s, synth)).collect()
}

pub fn windows(seqs: &[SyntheticSequence], window: usize, input_size: usize) -> Result<Vec<Window>> {
    let cfg = WindowConfig::new(window, input_size);
    let mut out = Vec::new();
    for s in seqs {
        out.extend(windows_from_sequence(
            &s.images(),
            &s.masks(),
            &s.poses(),
            &s.spec.intrinsics,
            &cfg,
        )?);
    }
    Ok(out)
}

/// Windows of freshly rendered sequences; each sequence is dropped once cut.
pub fn windows_from_specs(
    specs: &[SequenceSpec],
    synth: &SynthConfig,
    window: usize,
    input_size: usize,
) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for spec in specs {
        let seq = generate_sequence(spec, synth)?;
        out.extend(windows(std::slice::from_ref(&seq), window, input_size)?);
    }
    Ok(out)
}

/// Tracks every sequence from its ground-truth first pose with exact flow and masks.
pub fn track_all(seqs: &[SyntheticSequence], predictor: &mut dyn MotionPredictor) -> Result<Vec<Vec<Pose>>> {
    seqs.iter()
        .map(|s| {
            let k = s.spec.intrinsics;
            let init = TrackerInit::from_ground_truth(&s.frames[0].pose, &s.frames[0].mask, &k, BoxPadding::default())?;
            let traj = track_sequence(
                &s.images(),
                &k,
                &init,
                predictor,
                &OracleFlow { flows: s.flows() },
                &OracleMaskRefiner { masks: s.masks() },
                &TrackerConfig::default(),
                None,
            )?;
            Ok(traj.poses())
        })
        .collect()
}

pub fn summarize(tracks: &[Vec<Pose>], seqs: &[SyntheticSequence], segment_len: usize) -> Result<SegmentSummary> {
    let reports: Vec<SegmentReport> = tracks
        .iter()
        .zip(seqs)
        .map(|(t, s)| segment_errors(t, &s.poses(), segment_len))
        .collect::<Result<_>>()?;
    let n = reports.len().max(1) as f64;
    let mean = |f: fn(&SegmentReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(SegmentSummary {
        rotation_deg: mean(|r| r.mean_rotation_deg),
        translation_mm: mean(|r| r.mean_translation_mm),
        baseline_rotation_deg: mean(|r| r.baseline_rotation_deg),
        baseline_translation_mm: mean(|r| r.baseline_translation_mm),
        sequences: reports.len(),
    })
}

/// Trains both models and evaluates them; `log` receives progress lines.
pub fn run(cfg: &ExperimentConfig, mut log: impl FnMut(&str)) -> Result<ExperimentReport> {
    let size = cfg.encoder.input_size;
    let test_seqs = generate(&cfg.test_specs(), &cfg.synth)?;
    let seg = cfg.test_length;

    let zero = summarize(&track_all(&test_seqs, &mut ZeroPredictor { input_size: size })?, &test_seqs, seg)?;
    log(&format!(
        "mean motion: {:.2} deg, {:.2} mm",
        zero.baseline_rotation_deg, zero.baseline_translation_mm
    ));

    let mut results = Vec::new();
    let mut train_windows = 0;
    for multi in [false, true] {
        let mc = cfg.model(multi);
        let data = windows_from_specs(&cfg.train_specs(), &cfg.synth, mc.window, size)?;
        train_windows = data.len();
        let name = if multi { "multi-frame" } else { "two-frame" };
        log(&format!("{name}: {} windows, {} steps", data.len(), cfg.train.steps));
        let mut model = MotionModel::<f32>::new(&mc, cfg.seed)?;
        let every = (cfg.train.steps / 10).max(1);
        let report: TrainReport = train_with(&mut model, &data, &cfg.train, |step, p| {
            if (step + 1) % every == 0 {
                log(&format!(
                    "{name} step {}: loss {:.5} (rot {:.5}, trans {:.5})",
                    step + 1,
                    p.total,
                    p.rotation,
                    p.translation
                ));
            }
        })?;
        let mut pred = NetworkPredictor { model };
        let summary = summarize(&track_all(&test_seqs, &mut pred)?, &test_seqs, seg)?;
        log(&format!(
            "{name}: {:.2} deg, {:.2} mm",
            summary.rotation_deg, summary.translation_mm
        ));
        results.push((summary, report.total));
    }
    let (multi, multi_loss) = results.pop().expect("two results");
    let (two, two_loss) = results.pop().expect("two results");
    Ok(ExperimentReport {
        config: cfg.clone(),
        train_windows,
        two_frame: two,
        multi_frame: multi,
        zero_motion: zero,
        two_frame_loss: two_loss,
        multi_frame_loss: multi_loss,
    })
}
