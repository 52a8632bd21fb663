//! Chains predicted relative motions into a 6-DoF trajectory.
//!
//! The first pose is fixed up to gauge: the 2D center comes from the initial box, depth
//! `Z0` and rotation `R0` are free (defaults 1000 mm and identity). Each step propagates
//! the object mask, crops the last `K` frames with their union box, predicts a motion
//! code and composes `R_t = dR R_{t-1}`, `T_t = T_{t-1} + dT`.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle_to_matrix, backproject, decode_translation, project, validate_rotation, BBox, CameraIntrinsics,
    CropSpec, MotionCode, Pose, ROTATION_TOLERANCE,
};
use crate::models::{batch_tensor, target_code, MotionModel};
use crate::raster::RgbImage;
use crate::segmask::{
    padded_bbox, prepare_network_inputs, propagate_mask, BoxPadding, FlowProvider, Mask, MaskRefiner, NetworkInputs,
    SegmaskConfig,
};

pub const DEFAULT_Z0_MM: f64 = 1000.0;

/// Gauge and 2D initialization of the first tracked frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerInit {
    pub center0: (f64, f64),
    pub r0: Matrix3<f64>,
    pub z0: f64,
    pub bbox0: BBox,
}

impl TrackerInit {
    /// Identity rotation and the default depth.
    pub fn new(center0: (f64, f64), bbox0: BBox) -> Self {
        Self {
            center0,
            r0: Matrix3::identity(),
            z0: DEFAULT_Z0_MM,
            bbox0,
        }
    }

    /// Exact initialization from a known pose and instance mask.
    pub fn from_ground_truth(pose: &Pose, mask: &Mask, k: &CameraIntrinsics, padding: BoxPadding) -> Result<Self> {
        let (u, v, z) = project(k, &pose.translation)?;
        Ok(Self {
            center0: (u, v),
            r0: pose.rotation,
            z0: z,
            bbox0: padded_bbox(mask, padding)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z0 > 0.0) {
            return Err(Error::invalid("z0", "must be > 0"));
        }
        validate_rotation(&self.r0, ROTATION_TOLERANCE)?;
        if self.bbox0.is_degenerate() {
            return Err(Error::invalid("initial box", "degenerate"));
        }
        Ok(())
    }

    pub fn pose(&self, k: &CameraIntrinsics) -> Result<Pose> {
        Ok(Pose::new(self.r0, backproject(k, self.center0.0, self.center0.1, self.z0)?))
    }
}

/// One tracked frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub pose: Pose,
    pub center: (f64, f64),
    pub depth: f64,
    pub bbox: BBox,
    /// Code that produced this frame; `None` on initialization frames.
    pub code: Option<MotionCode>,
    pub crop: Option<CropSpec>,
    pub reinitialized: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub frames: Vec<TrackedFrame>,
}

impl Trajectory {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Source of relative-motion codes for a window of aligned crops.
pub trait MotionPredictor {
    /// Frames per window.
    fn window(&self) -> usize;
    /// Side of the square crops.
    fn input_size(&self) -> usize;
    /// Code for the motion from frame `t - 1` to frame `t`.
    fn predict(&mut self, t: usize, inputs: &NetworkInputs) -> Result<MotionCode>;
}

/// Always predicts no motion.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPredictor {
    pub input_size: usize,
}

impl MotionPredictor for ZeroPredictor {
    fn window(&self) -> usize {
        2
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn predict(&mut self, _t: usize, _inputs: &NetworkInputs) -> Result<MotionCode> {
        Ok(MotionCode::default())
    }
}

/// Ground-truth codes computed with the window's own crop.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<Pose>,
    pub input_size: usize,
}

impl MotionPredictor for OraclePredictor {
    fn window(&self) -> usize {
        2
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn predict(&mut self, t: usize, inputs: &NetworkInputs) -> Result<MotionCode> {
        match (t.checked_sub(1).and_then(|p| self.poses.get(p)), self.poses.get(t)) {
            (Some(prev), Some(cur)) => target_code(&self.intrinsics, prev, cur, &inputs.crop),
            _ => Err(Error::domain(format!("no ground truth for frame {t}"))),
        }
    }
}

/// Ground-truth codes plus i.i.d. Gaussian noise on every component.
#[derive(Debug, Clone)]
pub struct NoisyOraclePredictor {
    pub oracle: OraclePredictor,
    /// Standard deviation of each axis-angle component, rad.
    pub sigma_omega: f64,
    /// Standard deviation of `du`, `dv` and `s`.
    pub sigma_translation: f64,
    rng: ChaCha8Rng,
}

impl NoisyOraclePredictor {
    pub fn new(oracle: OraclePredictor, sigma_omega: f64, sigma_translation: f64, seed: u64) -> Self {
        Self {
            oracle,
            sigma_omega,
            sigma_translation,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl MotionPredictor for NoisyOraclePredictor {
    fn window(&self) -> usize {
        2
    }

    fn input_size(&self) -> usize {
        self.oracle.input_size
    }

    fn predict(&mut self, t: usize, inputs: &NetworkInputs) -> Result<MotionCode> {
        let mut c = self.oracle.predict(t, inputs)?;
        let nr = Normal::new(0.0, self.sigma_omega).map_err(|e| Error::domain(e.to_string()))?;
        let nt = Normal::new(0.0, self.sigma_translation).map_err(|e| Error::domain(e.to_string()))?;
        for w in &mut c.omega {
            *w += nr.sample(&mut self.rng);
        }
        c.du += nt.sample(&mut self.rng);
        c.dv += nt.sample(&mut self.rng);
        c.s += nt.sample(&mut self.rng);
        Ok(c)
    }
}

/// A trained two-frame or multi-frame model in evaluation mode.
pub struct NetworkPredictor {
    pub model: MotionModel<f32>,
}

impl MotionPredictor for NetworkPredictor {
    fn window(&self) -> usize {
        self.model.config.window
    }

    fn input_size(&self) -> usize {
        self.model.config.encoder.input_size
    }

    fn predict(&mut self, _t: usize, inputs: &NetworkInputs) -> Result<MotionCode> {
        let size = self.input_size();
        let x = batch_tensor::<f32>(&[inputs.crops.as_slice()], size);
        self.model
            .predict(&x)?
            .pop()
            .ok_or_else(|| Error::domain("model returned no prediction"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub segmask: SegmaskConfig,
    /// Extra margin around the window's union box, fraction of its size.
    pub crop_margin: f64,
    /// Reset to ground truth every `N` frames.
    pub reinit_every: Option<usize>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            segmask: SegmaskConfig::default(),
            crop_margin: 0.0,
            reinit_every: None,
        }
    }
}

struct Slot {
    image: RgbImage,
    mask: Mask,
    bbox: BBox,
}

/// Mutable tracking state; holds the raw frames of the current window.
pub struct TrackerState {
    pub frame: usize,
    pub pose: Pose,
    pub center: (f64, f64),
    pub depth: f64,
    history: VecDeque<Slot>,
    /// Oldest frame ever seen, used to pad short windows.
    first: Option<Slot>,
    capacity: usize,
}

impl TrackerState {
    pub fn new(
        init: &TrackerInit,
        frame0: &RgbImage,
        k: &CameraIntrinsics,
        refiner: &dyn MaskRefiner,
        window: usize,
    ) -> Result<Self> {
        init.validate()?;
        let pose = init.pose(k)?;
        let mask = refiner.refine(frame0, 0, &init.bbox0)?;
        if mask.count() == 0 {
            return Err(Error::TrackingLost {
                frame: 0,
                reason: "initial box contains no object".into(),
            });
        }
        let slot = Slot {
            image: frame0.clone(),
            mask,
            bbox: init.bbox0,
        };
        let mut history = VecDeque::with_capacity(window);
        history.push_back(Slot {
            image: slot.image.clone(),
            mask: slot.mask.clone(),
            bbox: slot.bbox,
        });
        Ok(Self {
            frame: 0,
            pose,
            center: init.center0,
            depth: init.z0,
            history,
            first: Some(slot),
            capacity: window.max(2),
        })
    }

    /// Resets pose, center, depth and box at the current frame.
    pub fn reinitialize(&mut self, init: &TrackerInit, k: &CameraIntrinsics, refiner: &dyn MaskRefiner) -> Result<()> {
        init.validate()?;
        self.pose = init.pose(k)?;
        self.center = init.center0;
        self.depth = init.z0;
        let t = self.frame;
        if let Some(last) = self.history.back_mut() {
            let mask = refiner.refine(&last.image, t, &init.bbox0)?;
            if mask.count() == 0 {
                return Err(Error::TrackingLost {
                    frame: t,
                    reason: "re-initialization box contains no object".into(),
                });
            }
            last.mask = mask;
            last.bbox = init.bbox0;
        }
        Ok(())
    }

    fn window_inputs(&self, window: usize, input_size: usize, margin: f64) -> Result<NetworkInputs> {
        let first = self.first.as_ref().or(self.history.front());
        let mut slots: Vec<&Slot> = self.history.iter().collect();
        if let Some(f) = first {
            while slots.len() < window {
                slots.insert(0, f);
            }
        }
        let slots = &slots[slots.len() - window..];
        let frames: Vec<&RgbImage> = slots.iter().map(|s| &s.image).collect();
        let masks: Vec<&Mask> = slots.iter().map(|s| &s.mask).collect();
        let boxes: Vec<BBox> = slots.iter().map(|s| s.bbox).collect();
        prepare_network_inputs(&frames, &masks, &boxes, input_size, input_size, margin)
    }
}

/// Advances the state by one frame.
pub fn track_step(
    state: &mut TrackerState,
    frame: &RgbImage,
    k: &CameraIntrinsics,
    predictor: &mut dyn MotionPredictor,
    flow: &dyn FlowProvider,
    refiner: &dyn MaskRefiner,
    cfg: &TrackerConfig,
) -> Result<TrackedFrame> {
    let t = state.frame + 1;
    let window = predictor.window();
    let prop = {
        let last = state.history.back().ok_or_else(|| Error::domain("tracker has no history"))?;
        propagate_mask(&last.mask, &last.image, frame, flow, refiner, &cfg.segmask)?
    };
    state.history.push_back(Slot {
        image: frame.clone(),
        mask: prop.mask,
        bbox: prop.bbox,
    });
    while state.history.len() > state.capacity.max(window) {
        state.history.pop_front();
    }
    let inputs = state
        .window_inputs(window, predictor.input_size(), cfg.crop_margin)
        .map_err(|e| e.at_frame(t))?;
    let code = predictor.predict(t, &inputs).map_err(|e| e.at_frame(t))?;
    let step = decode_translation(k, state.center, state.depth, &code.translation(), &inputs.crop)
        .map_err(|e| e.at_frame(t))?;
    let d_r = axis_angle_to_matrix(&code.omega()).map_err(|e| e.at_frame(t))?;
    let translation: Vector3<f64> = state.pose.translation + step.delta_t;
    state.pose = Pose::new(d_r * state.pose.rotation, translation);
    state.center = step.center;
    state.depth = step.depth;
    state.frame = t;
    Ok(TrackedFrame {
        pose: state.pose,
        center: state.center,
        depth: state.depth,
        bbox: prop.bbox,
        code: Some(code),
        crop: Some(inputs.crop),
        reinitialized: false,
    })
}

/// Ground-truth initializations used for periodic resets, indexed by frame.
pub struct Reinit<'a> {
    pub every: usize,
    pub inits: &'a [TrackerInit],
}

/// Tracks a whole sequence; on failure returns the frames tracked so far with the error.
pub fn track_sequence_partial(
    frames: &[RgbImage],
    k: &CameraIntrinsics,
    init: &TrackerInit,
    predictor: &mut dyn MotionPredictor,
    flow: &dyn FlowProvider,
    refiner: &dyn MaskRefiner,
    cfg: &TrackerConfig,
    reinit: Option<Reinit<'_>>,
) -> (Trajectory, Option<Error>) {
    let mut traj = Trajectory::default();
    if frames.len() < 2 {
        return (traj, Some(Error::domain("tracking needs at least 2 frames")));
    }
    if let Some(r) = &reinit {
        if r.every == 0 || r.inits.len() < frames.len() {
            return (traj, Some(Error::invalid("reinit", "need a period >= 1 and one init per frame")));
        }
    }
    let mut state = match TrackerState::new(init, &frames[0], k, refiner, predictor.window()) {
        Ok(s) => s,
        Err(e) => return (traj, Some(e)),
    };
    traj.frames.push(TrackedFrame {
        pose: state.pose,
        center: state.center,
        depth: state.depth,
        bbox: init.bbox0,
        code: None,
        crop: None,
        reinitialized: true,
    });
    for (t, frame) in frames.iter().enumerate().skip(1) {
        let mut out = match track_step(&mut state, frame, k, predictor, flow, refiner, cfg) {
            Ok(f) => f,
            Err(e) => return (traj, Some(e)),
        };
        if let Some(r) = reinit.as_ref().filter(|r| t % r.every == 0) {
            let gi = &r.inits[t];
            if let Err(e) = state.reinitialize(gi, k, refiner) {
                return (traj, Some(e));
            }
            out.pose = state.pose;
            out.center = state.center;
            out.depth = state.depth;
            out.bbox = gi.bbox0;
            out.reinitialized = true;
        }
        traj.frames.push(out);
    }
    (traj, None)
}

#[allow(clippy::too_many_arguments)]
pub fn track_sequence(
    frames: &[RgbImage],
    k: &CameraIntrinsics,
    init: &TrackerInit,
    predictor: &mut dyn MotionPredictor,
    flow: &dyn FlowProvider,
    refiner: &dyn MaskRefiner,
    cfg: &TrackerConfig,
    reinit: Option<Reinit<'_>>,
) -> Result<Trajectory> {
    match track_sequence_partial(frames, k, init, predictor, flow, refiner, cfg, reinit) {
        (t, None) => Ok(t),
        (_, Some(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{relative_rotation, rot_y, rot_z};
    use crate::segmask::{OracleFlow, OracleMaskRefiner};
    use crate::synth::{generate_sequence, Protocol, SequenceSpec, SynthConfig};

    fn sequence(len: usize, seed: u64) -> crate::synth::SyntheticSequence {
        let spec = SequenceSpec {
            length: len,
            ..SequenceSpec::new(Protocol::ShapenetVideo, seed)
        };
        generate_sequence(&spec, &SynthConfig::default()).unwrap()
    }

    fn run(
        seq: &crate::synth::SyntheticSequence,
        init: &TrackerInit,
        predictor: &mut dyn MotionPredictor,
    ) -> Trajectory {
        let refiner = OracleMaskRefiner { masks: seq.masks() };
        let flow = OracleFlow { flows: seq.flows() };
        track_sequence(
            &seq.images(),
            &seq.spec.intrinsics,
            init,
            predictor,
            &flow,
            &refiner,
            &TrackerConfig::default(),
            None,
        )
        .unwrap()
    }

    fn gt_init(seq: &crate::synth::SyntheticSequence) -> TrackerInit {
        TrackerInit::from_ground_truth(&seq.frames[0].pose, &seq.frames[0].mask, &seq.spec.intrinsics, BoxPadding::default())
            .unwrap()
    }

    #[test]
    fn zero_predictor_keeps_pose() {
        let seq = sequence(4, 1);
        let init = gt_init(&seq);
        let traj = run(&seq, &init, &mut ZeroPredictor { input_size: 16 });
        for f in &traj.frames {
            assert_eq!(f.pose, traj.frames[0].pose);
        }
    }

    #[test]
    fn oracle_recovers_ground_truth() {
        let seq = sequence(12, 2);
        let init = gt_init(&seq);
        let mut oracle = OraclePredictor {
            intrinsics: seq.spec.intrinsics,
            poses: seq.poses(),
            input_size: 16,
        };
        let traj = run(&seq, &init, &mut oracle);
        assert_eq!(traj.len(), 12);
        for (f, g) in traj.frames.iter().zip(seq.poses()) {
            assert!((f.pose.translation - g.translation).norm() < 1e-6);
            // chordal distance; arccos loses precision near zero
            assert!((f.pose.rotation - g.rotation).norm() / 2f64.sqrt() < 1e-8);
        }
        // first two steps equal the composed ground-truth relative motions
        let p = seq.poses();
        let d1 = relative_rotation(&p[0].rotation, &p[1].rotation).unwrap();
        let d2 = relative_rotation(&p[1].rotation, &p[2].rotation).unwrap();
        assert!((traj.frames[2].pose.rotation - d2 * d1 * p[0].rotation).norm() < 1e-9);
    }

    #[test]
    fn gauge_depth_and_rotation() {
        let seq = sequence(8, 3);
        let base = gt_init(&seq);
        let mk = || OraclePredictor {
            intrinsics: seq.spec.intrinsics,
            poses: seq.poses(),
            input_size: 16,
        };
        let a = run(&seq, &TrackerInit { r0: Matrix3::identity(), ..base }, &mut mk());
        let b = run(&seq, &TrackerInit { r0: Matrix3::identity(), z0: base.z0 * 2.5, ..base }, &mut mk());
        let q = rot_y(0.4) * rot_z(-1.1);
        let c = run(&seq, &TrackerInit { r0: q, ..base }, &mut mk());
        for ((fa, fb), fc) in a.frames.iter().zip(&b.frames).zip(&c.frames) {
            assert!((fb.pose.translation - fa.pose.translation * 2.5).norm() <= 1e-9 * fa.pose.translation.norm() * 2.5);
            assert!((fb.pose.rotation - fa.pose.rotation).norm() < 1e-12);
            assert!((fc.pose.rotation - fa.pose.rotation * q).norm() < 1e-9);
            assert_eq!(fc.center, fa.center);
        }
    }

    #[test]
    fn two_frames_is_one_step() {
        let seq = sequence(2, 4);
        let traj = run(&seq, &gt_init(&seq), &mut ZeroPredictor { input_size: 8 });
        assert_eq!(traj.len(), 2);
        assert!(traj.frames[1].code.is_some());
    }

    #[test]
    fn reinit_restores_ground_truth() {
        let seq = sequence(10, 5);
        let k = seq.spec.intrinsics;
        let inits: Vec<TrackerInit> = seq
            .frames
            .iter()
            .map(|f| TrackerInit::from_ground_truth(&f.pose, &f.mask, &k, BoxPadding::default()).unwrap())
            .collect();
        let refiner = OracleMaskRefiner { masks: seq.masks() };
        let flow = OracleFlow { flows: seq.flows() };
        let traj = track_sequence(
            &seq.images(),
            &k,
            &inits[0],
            &mut ZeroPredictor { input_size: 8 },
            &flow,
            &refiner,
            &TrackerConfig::default(),
            Some(Reinit { every: 3, inits: &inits }),
        )
        .unwrap();
        for t in [3, 6, 9] {
            assert!(traj.frames[t].reinitialized);
            assert!((traj.frames[t].pose.translation - seq.frames[t].pose.translation).norm() < 1e-9);
        }
        assert_eq!(traj.frames[4].pose, traj.frames[3].pose);
    }
}
