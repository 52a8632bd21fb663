//! Command-line front end: `synth-gen`, `train`, `track`, `eval` and `plot`.
//!
//! Values resolve as flag > config file > built-in default. Exit codes: 0 on success,
//! 2 for usage errors (bad flags, invalid configs, mismatched inputs), 3 for runtime
//! failures (tracking lost, non-finite loss, I/O).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{project, validate_rotation, Pose, ROTATION_TOLERANCE};
use crate::io::{read_json, read_sequence, write_bytes_atomic, write_json_atomic, SequenceOnDisk, TrajectoryFile, TrajectoryStatus};
use crate::metrics::{evaluate, MetricReport, MetricsConfig};
use crate::models::{
    checkpoint, train_with, windows_from_sequence, EncoderConfig, ModelConfig, ModelKind, MotionModel, RegressorConfig,
    TrainConfig, TransformerConfig, Window, WindowConfig,
};
use crate::nn::AdamConfig;
use crate::segmask::{BoxPadding, FlowField, FlowProvider, OracleMaskRefiner, RigidDepthFlow};
use crate::synth::{generate_from_config, DatasetConfig, Manifest, MANIFEST_FILE};
use crate::tracker::{
    track_sequence_partial, MotionPredictor, NetworkPredictor, OraclePredictor, Reinit, TrackerConfig, TrackerInit,
    DEFAULT_Z0_MM,
};

/// Environment variable naming the default data root.
pub const DATA_ENV: &str = "OBJTRACK_DATA";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "objtrack", version, about = "Relative-motion 6-DoF object tracking on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset.
    SynthGen(SynthGenArgs),
    /// Train a two-frame or multi-frame model.
    Train(TrainArgs),
    /// Track one sequence and write its trajectory.
    Track(TrackArgs),
    /// Score a trajectory against ground truth.
    Eval(EvalArgs),
    /// Plot per-frame errors of one or more reports.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Dataset config (JSON: protocol, count, seed, width, height, intrinsics, length, synth).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, env = DATA_ENV)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (JSON, see `schemas/train_config.schema.json`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `synth-gen`, or a single sequence.
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV loss log; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    /// `two_frame` or `multi_frame`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Model checkpoint; not needed with `--oracle-predictor`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub sequence: PathBuf,
    /// Trajectory JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Use ground-truth motion codes instead of a network.
    #[arg(long)]
    pub oracle_predictor: bool,
    /// Reset to the ground-truth pose every N frames.
    #[arg(long)]
    pub reinit_every: Option<usize>,
    /// Initial depth, mm.
    #[arg(long)]
    pub z0: Option<f64>,
    /// Initial rotation, nine comma-separated row-major values.
    #[arg(long, value_delimiter = ',', num_args = 9, allow_negative_numbers = true)]
    pub r0: Option<Vec<f64>>,
    /// Initial 2D center `U,V`; defaults to the projected ground-truth position.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    pub center: Option<Vec<f64>>,
    /// Take the unset parts of the initial pose (`R0`, `Z0`) from ground truth.
    #[arg(long)]
    pub gt_init: bool,
    /// Input crop side for the oracle predictor.
    #[arg(long, default_value_t = 32)]
    pub input_size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub sequence: PathBuf,
    /// Metrics config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// MetricReport files.
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid { .. } | Error::Json { .. } => EXIT_USAGE,
        Error::AtFrame { source, .. } => exit_code(source).max(EXIT_RUNTIME),
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen(a) => cmd_synth_gen(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Track(a) => cmd_track(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Plot(a) => cmd_plot(&a).map(|_| ()),
    }
}

fn config_value(path: Option<&Path>) -> Result<Value> {
    match path {
        Some(p) => {
            let v: Value = read_json(p)?;
            if !v.is_object() {
                return Err(Error::invalid(p.display().to_string(), "config must be a JSON object"));
            }
            Ok(v)
        }
        None => Ok(Value::Object(Default::default())),
    }
}

fn set<T: Serialize>(v: &mut Value, key: &str, flag: Option<T>) {
    if let (Some(x), Some(obj)) = (flag, v.as_object_mut()) {
        obj.insert(key.to_string(), serde_json::to_value(x).expect("plain value"));
    }
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::invalid(what, e.to_string()))
}

pub fn cmd_synth_gen(a: &SynthGenArgs) -> Result<PathBuf> {
    let mut v = config_value(Some(&a.config))?;
    set(&mut v, "count", a.count);
    set(&mut v, "seed", a.seed);
    let cfg: DatasetConfig = from_value(v, &a.config.display().to_string())?;
    let manifest = generate_from_config(&cfg, &a.out)?;
    let path = a.out.join(MANIFEST_FILE);
    println!("{} ({} sequences)", path.display(), manifest.sequences.len());
    Ok(path)
}

/// Training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_final_lr")]
    pub final_lr_fraction: f64,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
    #[serde(default)]
    pub regressor: RegressorConfig,
    #[serde(default)]
    pub padding: BoxPadding,
    #[serde(default)]
    pub crop_margin: f64,
}

fn default_steps() -> usize {
    TrainConfig::default().steps
}
fn default_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_lambda() -> f64 {
    1.0
}
fn default_final_lr() -> f64 {
    1.0
}

impl TrainFileConfig {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let window = match self.model {
            ModelKind::TwoFrame => self.window.unwrap_or(2),
            ModelKind::MultiFrame => self.window.unwrap_or(5),
        };
        let cfg = ModelConfig {
            kind: self.model,
            window,
            encoder: self.encoder.clone(),
            transformer: self.transformer.clone(),
            regressor: self.regressor.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            lambda: self.lambda,
            adam: AdamConfig {
                lr: self.lr.unwrap_or(AdamConfig::default().lr),
                ..AdamConfig::default()
            },
            final_lr_fraction: self.final_lr_fraction,
        }
    }
}

/// Sequence directories of a dataset, or the directory itself if it holds one sequence.
pub fn dataset_sequences(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.is_file() {
        let m: Manifest = read_json(&manifest)?;
        return Ok(m.sequences.iter().map(|e| dir.join(&e.id)).collect());
    }
    if dir.join(crate::io::META_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    Err(Error::invalid(
        dir.display().to_string(),
        "neither a dataset (manifest.json) nor a sequence (meta.json)",
    ))
}

fn require_masks<'a>(seq: &'a SequenceOnDisk, dir: &Path) -> Result<&'a Vec<crate::segmask::Mask>> {
    seq.masks
        .as_ref()
        .ok_or_else(|| Error::invalid(dir.display().to_string(), "sequence has no masks/ directory"))
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub windows: usize,
    pub final_loss: f64,
    pub config: TrainFileConfig,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary> {
    let mut v = config_value(a.config.as_deref())?;
    set(&mut v, "model", a.model.clone());
    set(&mut v, "window", a.window);
    set(&mut v, "steps", a.steps);
    set(&mut v, "seed", a.seed);
    set(&mut v, "batch_size", a.batch_size);
    set(&mut v, "lr", a.lr);
    let what = a
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "train config".into());
    let cfg: TrainFileConfig = from_value(v, &what)?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;

    let wcfg = WindowConfig {
        window: model_cfg.window,
        input_size: model_cfg.encoder.input_size,
        padding: cfg.padding,
        crop_margin: cfg.crop_margin,
    };
    let mut data: Vec<Window> = Vec::new();
    for dir in dataset_sequences(&a.data)? {
        let seq = read_sequence(&dir)?;
        let masks = require_masks(&seq, &dir)?;
        data.extend(windows_from_sequence(&seq.frames, masks, &seq.poses, &seq.meta.intrinsics, &wcfg)?);
    }
    eprintln!("training {:?} (K = {}) on {} windows", model_cfg.kind, model_cfg.window, data.len());

    let mut model = MotionModel::<f32>::new(&model_cfg, cfg.seed)?;
    let mut csv = String::from("step,total,rotation,translation\n");
    let every = (train_cfg.steps / 20).max(1);
    let report = train_with(&mut model, &data, &train_cfg, |step, p| {
        let _ = writeln!(csv, "{},{},{},{}", step, p.total, p.rotation, p.translation);
        if (step + 1) % every == 0 {
            eprintln!("step {:>6}  loss {:.6}", step + 1, p.total);
        }
    });
    let loss_log = a.loss_log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    write_bytes_atomic(&loss_log, csv.as_bytes())?;
    let report = report?;
    checkpoint::save(&a.out, &model, train_cfg.steps, Some(&train_cfg))?;
    let final_loss = report.total.last().copied().unwrap_or(f64::NAN);
    println!("{} (final loss {final_loss:.6})", a.out.display());
    Ok(TrainSummary {
        checkpoint: a.out.clone(),
        loss_log,
        windows: data.len(),
        final_loss,
        config: cfg,
    })
}

/// Zero flow, used when a sequence has no depth maps.
struct ZeroFlow {
    width: usize,
    height: usize,
}

impl FlowProvider for ZeroFlow {
    fn flow(&self, _: &crate::raster::RgbImage, from: usize, _: &crate::raster::RgbImage, to: usize) -> Result<FlowField> {
        Ok(FlowField::zeros(self.width, self.height, from, to))
    }
}

fn rotation_from_flag(v: &[f64]) -> Result<Matrix3<f64>> {
    let r = Matrix3::from_row_slice(v);
    validate_rotation(&r, ROTATION_TOLERANCE).map_err(|e| Error::invalid("--r0", e.to_string()))?;
    Ok(r)
}

fn gt_init_for(seq: &SequenceOnDisk, frame: usize, padding: BoxPadding) -> Result<TrackerInit> {
    let masks = seq.masks.as_ref().ok_or_else(|| Error::invalid("sequence", "no masks"))?;
    TrackerInit::from_ground_truth(&seq.poses[frame], &masks[frame], &seq.meta.intrinsics, padding)
}

pub fn cmd_track(a: &TrackArgs) -> Result<TrajectoryFile> {
    let seq = read_sequence(&a.sequence)?;
    let masks = require_masks(&seq, &a.sequence)?.clone();
    let k = seq.meta.intrinsics;
    let tcfg = TrackerConfig {
        reinit_every: a.reinit_every,
        ..TrackerConfig::default()
    };
    if a.reinit_every == Some(0) {
        return Err(Error::invalid("--reinit-every", "must be >= 1"));
    }

    let mut predictor: Box<dyn MotionPredictor> = if a.oracle_predictor {
        Box::new(OraclePredictor {
            intrinsics: k,
            poses: seq.poses.clone(),
            input_size: a.input_size,
        })
    } else {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::invalid("--checkpoint", "required unless --oracle-predictor is given"))?;
        let (model, _) = checkpoint::load::<f32>(path)?;
        Box::new(NetworkPredictor { model })
    };

    let gt0 = gt_init_for(&seq, 0, tcfg.segmask.initial_padding)?;
    let center0 = match &a.center {
        Some(c) => (c[0], c[1]),
        None => {
            let (u, v, _) = project(&k, &seq.poses[0].translation)?;
            (u, v)
        }
    };
    let r0 = match &a.r0 {
        Some(v) => rotation_from_flag(v)?,
        None if a.gt_init => gt0.r0,
        None => Matrix3::identity(),
    };
    let z0 = match a.z0 {
        Some(z) if !(z > 0.0) => return Err(Error::invalid("--z0", "must be > 0")),
        Some(z) => z,
        None if a.gt_init => gt0.z0,
        None => DEFAULT_Z0_MM,
    };
    let init = TrackerInit {
        center0,
        r0,
        z0,
        bbox0: gt0.bbox0,
    };

    let refiner = OracleMaskRefiner { masks };
    let flow: Box<dyn FlowProvider> = match &seq.depths {
        Some(d) => Box::new(RigidDepthFlow {
            intrinsics: k,
            poses: seq.poses.clone(),
            depths: d.clone(),
            width: seq.meta.width,
            height: seq.meta.height,
        }),
        None => Box::new(ZeroFlow {
            width: seq.meta.width,
            height: seq.meta.height,
        }),
    };
    let inits: Vec<TrackerInit> = if a.reinit_every.is_some() {
        (0..seq.frames.len())
            .map(|t| gt_init_for(&seq, t, tcfg.segmask.initial_padding))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let reinit = a.reinit_every.map(|every| Reinit { every, inits: &inits });
    let (traj, err) = track_sequence_partial(
        &seq.frames,
        &k,
        &init,
        predictor.as_mut(),
        flow.as_ref(),
        &refiner,
        &tcfg,
        reinit,
    );
    let file = TrajectoryFile {
        status: if err.is_some() {
            TrajectoryStatus::Lost
        } else {
            TrajectoryStatus::Complete
        },
        error: err.as_ref().map(|e| e.to_string()),
        sequence_length: seq.frames.len(),
        predictor: if a.oracle_predictor { "oracle".into() } else { "network".into() },
        z0,
        r0: crate::io::PoseRecord::from_pose(0, &Pose::new(r0, Vector3::zeros())).r,
        reinit_every: a.reinit_every,
        frames: TrajectoryFile::from_trajectory(&traj),
    };
    write_json_atomic(&a.out, &file)?;
    match err {
        Some(e) => {
            eprintln!("wrote partial trajectory ({} frames) to {}", file.frames.len(), a.out.display());
            Err(e)
        }
        None => {
            println!("{} ({} frames)", a.out.display(), file.frames.len());
            Ok(file)
        }
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricReport> {
    let v = config_value(a.config.as_deref())?;
    let cfg: MetricsConfig = from_value(v, "metrics config")?;
    let traj: TrajectoryFile = read_json(&a.trajectory)?;
    let seq = read_sequence(&a.sequence)?;
    if traj.frames.len() != seq.poses.len() {
        return Err(Error::invalid(
            "trajectory",
            format!("{} frames, sequence has {}", traj.frames.len(), seq.poses.len()),
        ));
    }
    let points: Vec<Vector3<f64>> = seq
        .points
        .as_ref()
        .ok_or_else(|| Error::invalid(a.sequence.display().to_string(), "no points.json for ADD metrics"))?
        .iter()
        .map(|p| Vector3::from(*p))
        .collect();
    let mut report = evaluate(&traj.poses()?, &seq.poses, &points, &seq.meta.intrinsics, &cfg)?;
    report.label = a.label.clone().or_else(|| {
        a.trajectory
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
    });
    print!("{}", report.table());
    if let Some(out) = &a.out {
        write_json_atomic(out, &report)?;
    }
    Ok(report)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const DASHES: [&str; 3] = ["", "6,3", "2,2"];

/// Line chart of per-axis curves; `series` is `(label, per-axis values)`.
pub fn svg_plot(title: &str, y_label: &str, series: &[(String, [Vec<f64>; 3])]) -> String {
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (60.0, 170.0, 30.0, 45.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let n = series.iter().map(|(_, a)| a[0].len()).max().unwrap_or(0).max(2);
    let ymax = series
        .iter()
        .flat_map(|(_, a)| a.iter().flatten())
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let x = |i: usize| ml + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| mt + ph * (1.0 - v / ymax);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, ml + pw / 2.0, title);
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in 0..=4 {
        let v = ymax * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{ml}" y1="{y0:.2}" x2="{x1}" y2="{y0:.2}" stroke="#ddd"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{v:.1}</text>"##,
            y0 = y(v),
            x1 = ml + pw,
            tx = ml - 6.0,
            ty = y(v) + 4.0
        );
    }
    let ticks = (n - 1).min(10);
    for t in 0..=ticks {
        let i = (n - 1) * t / ticks;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{i}</text>"#,
            x(i),
            mt + ph + 16.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">frame</text>"#, ml + pw / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        y_label
    );
    let mut ly = mt + 10.0;
    for (si, (label, axes)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        for (ai, vals) in axes.iter().enumerate() {
            let pts: Vec<String> = vals
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
                .collect();
            let dash = if DASHES[ai].is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{}""#, DASHES[ai])
            };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                pts.join(" ")
            );
            let lx = ml + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly:.2}" x2="{}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{}" y="{:.2}">{} {}</text>"#,
                lx + 24.0,
                lx + 30.0,
                ly + 4.0,
                xml_escape(label),
                ["x", "y", "z"][ai]
            );
            ly += 16.0;
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn cmd_plot(a: &PlotArgs) -> Result<Vec<PathBuf>> {
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    for p in &a.reports {
        let r: MetricReport = read_json(p)?;
        let label = r
            .label
            .clone()
            .unwrap_or_else(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let axis = |f: &dyn Fn(&crate::metrics::FrameMetrics) -> [f64; 3]| -> [Vec<f64>; 3] {
            [0, 1, 2].map(|i| r.frames.iter().map(|fm| f(fm)[i]).collect())
        };
        rot.push((label.clone(), axis(&|f| f.rotation_axes_deg)));
        trans.push((label, axis(&|f| f.translation_axes_mm)));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let files = [
        (a.out.join("rotation_error.svg"), svg_plot("Rotation error", "deg", &rot)),
        (a.out.join("translation_error.svg"), svg_plot("Translation error", "mm", &trans)),
    ];
    let mut out = Vec::new();
    for (path, svg) in files {
        write_bytes_atomic(&path, svg.as_bytes())?;
        println!("{}", path.display());
        out.push(path);
    }
    Ok(out)
}
