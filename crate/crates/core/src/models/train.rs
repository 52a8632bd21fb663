use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::motion::{batch_tensor, LossParts, MotionModel};
use crate::error::{Error, Result};
use crate::geometry::{
    encode_translation, matrix_to_axis_angle, relative_rotation, CameraIntrinsics, CropSpec, MotionCode, Pose,
};
use crate::nn::{Adam, Float};
use crate::raster::RgbImage;
use crate::segmask::{padded_bbox, prepare_network_inputs, BoxPadding, Mask};

/// One training example: `K` aligned crops and the code of the last frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Planar RGB crops, `3 x S x S` each.
    pub crops: Vec<Vec<f32>>,
    pub target: MotionCode,
    pub crop: CropSpec,
}

/// How windows are cut from a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub input_size: usize,
    pub padding: BoxPadding,
    pub crop_margin: f64,
}

impl WindowConfig {
    pub fn new(window: usize, input_size: usize) -> Self {
        Self {
            window,
            input_size,
            padding: BoxPadding::default(),
            crop_margin: 0.0,
        }
    }
}

/// Indices of the `k` frames ending at `t`, repeating frame 0 before the start.
pub fn window_indices(t: usize, k: usize) -> Vec<usize> {
    (0..k).map(|j| (t + j + 1).saturating_sub(k)).collect()
}

/// Ground-truth code for `prev -> cur` under `crop`.
pub fn target_code(k: &CameraIntrinsics, prev: &Pose, cur: &Pose, crop: &CropSpec) -> Result<MotionCode> {
    let t = encode_translation(k, prev, cur, crop)?;
    let omega = matrix_to_axis_angle(&relative_rotation(&prev.rotation, &cur.rotation)?)?;
    Ok(MotionCode {
        du: t.du,
        dv: t.dv,
        s: t.s,
        omega: [omega.x, omega.y, omega.z],
    })
}

/// Windows ending at every frame `t >= 1`, with boxes from the padded instance masks.
pub fn windows_from_sequence(
    frames: &[RgbImage],
    masks: &[Mask],
    poses: &[Pose],
    k: &CameraIntrinsics,
    cfg: &WindowConfig,
) -> Result<Vec<Window>> {
    if frames.len() != masks.len() || frames.len() != poses.len() {
        return Err(Error::domain("frames, masks and poses must have equal counts"));
    }
    let boxes = masks
        .iter()
        .map(|m| padded_bbox(m, cfg.padding))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for t in 1..frames.len() {
        let idx = window_indices(t, cfg.window);
        let f: Vec<&RgbImage> = idx.iter().map(|&i| &frames[i]).collect();
        let m: Vec<&Mask> = idx.iter().map(|&i| &masks[i]).collect();
        let b: Vec<_> = idx.iter().map(|&i| boxes[i]).collect();
        let inputs = prepare_network_inputs(&f, &m, &b, cfg.input_size, cfg.input_size, cfg.crop_margin)
            .map_err(|e| e.at_frame(t))?;
        let target = target_code(k, &poses[t - 1], &poses[t], &inputs.crop).map_err(|e| e.at_frame(t))?;
        out.push(Window {
            crops: inputs.crops,
            target,
            crop: inputs.crop,
        });
    }
    Ok(out)
}

/// Per-step loss history.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub total: Vec<f64>,
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
}

pub fn train<T: Float>(model: &mut MotionModel<T>, data: &[Window], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, data, cfg, |_, _| {})
}

/// Adam over shuffled mini-batches; `on_step(step, losses)` is called after every update.
pub fn train_with<T: Float>(
    model: &mut MotionModel<T>,
    data: &[Window],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossParts),
) -> Result<TrainReport> {
    cfg.validate()?;
    let bs = cfg.batch_size.min(data.len());
    if bs < 2 {
        return Err(Error::invalid("dataset", "need at least 2 windows"));
    }
    let k = model.config.window;
    if data.iter().any(|w| w.crops.len() != k) {
        return Err(Error::invalid("dataset", format!("every window must hold {k} frames")));
    }
    let size = model.config.encoder.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        if cursor + bs > order.len() {
            order = (0..data.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = &order[cursor..cursor + bs];
        cursor += bs;
        let windows: Vec<&[Vec<f32>]> = batch.iter().map(|&i| data[i].crops.as_slice()).collect();
        let targets: Vec<MotionCode> = batch.iter().map(|&i| data[i].target).collect();
        let x = batch_tensor::<T>(&windows, size);
        let (parts, grads) = model.loss_and_grads(&x, &targets, cfg.lambda)?;
        if !parts.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.config.lr = cfg.lr_at(step);
        adam.update(&mut model.store, &grads);
        report.total.push(parts.total);
        report.rotation.push(parts.rotation);
        report.translation.push(parts.translation);
        on_step(step, &parts);
    }
    Ok(report)
}

/// Evaluation-mode predictions for many windows, in chunks of `batch`.
pub fn predict_windows<T: Float>(model: &mut MotionModel<T>, data: &[Window], batch: usize) -> Result<Vec<MotionCode>> {
    let size = model.config.encoder.input_size;
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch.max(1)) {
        let windows: Vec<&[Vec<f32>]> = chunk.iter().map(|w| w.crops.as_slice()).collect();
        out.extend(model.predict(&batch_tensor::<T>(&windows, size))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_indices_pad_with_first_frame() {
        assert_eq!(window_indices(1, 2), vec![0, 1]);
        assert_eq!(window_indices(1, 4), vec![0, 0, 0, 1]);
        assert_eq!(window_indices(6, 3), vec![4, 5, 6]);
    }
}
