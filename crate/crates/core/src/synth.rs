//! Procedural synthetic sequences: random point-cloud objects, pose samplers for the
//! object-pair and video protocols, a depth-buffered point-splat renderer, and
//! ground-truth masks, depth and optical flow.

use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, rot_x, rot_y, rot_z, rotation_angle, CameraIntrinsics, Pose};
use crate::raster::RgbImage;
use crate::segmask::{FlowField, Mask};

/// Depth of the first object-pair pose, mm.
pub const PAIR_DEPTH_MM: f64 = 500.0;
pub const PAIR_ROT_STD_DEG: f64 = 15.0;
pub const PAIR_XY_STD_MM: f64 = 10.0;
pub const PAIR_Z_STD_MM: f64 = 50.0;
pub const PAIR_MAX_ANGLE_DEG: f64 = 45.0;
pub const VIDEO_DEPTH_RANGE_MM: (f64, f64) = (400.0, 2000.0);
pub const VIDEO_ROT_STD_DEG: f64 = 20.0;
pub const VIDEO_STEP_STD_MM: f64 = 20.0;
pub const VIDEO_DEFAULT_LENGTH: usize = 100;
pub const MAX_RETRIES: usize = 1000;
pub const MIN_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Two frames at 0.5 m with a bounded random perturbation.
    ModelnetPair,
    /// Random-walk video starting between 0.4 m and 2 m.
    ShapenetVideo,
}

impl Protocol {
    pub fn default_length(&self) -> usize {
        match self {
            Protocol::ModelnetPair => 2,
            Protocol::ShapenetVideo => VIDEO_DEFAULT_LENGTH,
        }
    }
}

/// Point cloud standing in for a CAD model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Object-frame coordinates, mm, centered.
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f32; 3]>,
    /// Unit outward normals; empty disables shading and back-face culling.
    #[serde(default)]
    pub normals: Vec<[f64; 3]>,
    pub splat_radius: f64,
    pub object_id: u64,
}

impl SceneObject {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_POINTS {
            return Err(Error::invalid(
                "scene object",
                format!("{} points, need at least {MIN_POINTS}", self.points.len()),
            ));
        }
        if self.colors.len() != self.points.len() {
            return Err(Error::invalid("scene object", "one color per point required"));
        }
        if !self.normals.is_empty() && self.normals.len() != self.points.len() {
            return Err(Error::invalid("scene object", "normals must match points"));
        }
        if !(self.splat_radius >= 0.0) {
            return Err(Error::invalid("scene object", "splat radius must be >= 0"));
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.points[i])
    }

    /// Largest distance from the center, mm.
    pub fn radius(&self) -> f64 {
        self.points
            .iter()
            .map(|p| Vector3::from(*p).norm())
            .fold(0.0, f64::max)
    }
}

/// Background fill of a rendered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Background {
    Solid { color: [f32; 3] },
    /// Linear blend from `from` at the left edge to `to` at the right edge.
    Gradient { from: [f32; 3], to: [f32; 3] },
    /// Per-pixel uniform noise around `mean`, reproducible from `seed`.
    Noise { mean: [f32; 3], amplitude: f32, seed: u64 },
}

impl Default for Background {
    fn default() -> Self {
        Background::Solid { color: [0.0; 3] }
    }
}

impl Background {
    pub fn fill(&self, width: usize, height: usize) -> RgbImage {
        let mut img = RgbImage::new(width, height);
        match self {
            Background::Solid { color } => {
                for px in img.data.chunks_exact_mut(3) {
                    px.copy_from_slice(color);
                }
            }
            Background::Gradient { from, to } => {
                let denom = (width.max(2) - 1) as f32;
                for y in 0..height {
                    for x in 0..width {
                        let a = x as f32 / denom;
                        let c = [0, 1, 2].map(|i| from[i] * (1.0 - a) + to[i] * a);
                        img.set(x, y, c);
                    }
                }
            }
            Background::Noise { mean, amplitude, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for px in img.data.chunks_exact_mut(3) {
                    for (c, m) in px.iter_mut().zip(mean) {
                        *c = (m + amplitude * (rng.random::<f32>() * 2.0 - 1.0)).clamp(0.0, 1.0);
                    }
                }
            }
        }
        img
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Solid,
    Gradient,
    Noise,
}

/// How point colors vary over the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Base color plus a random linear function of position.
    Gradient,
    /// Regions around random directions, each with its own color, plus a weak gradient.
    Patches,
}

/// Number of colored regions of a [`TextureKind::Patches`] object.
pub const PATCHES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipsoid,
    Box,
    Cylinder,
}

/// Per-sequence appearance used by [`render_frame_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub background: Background,
    /// Global intensity multiplier.
    pub brightness: f64,
    /// Direction towards the light, camera frame.
    pub light_dir: [f64; 3],
    pub ambient: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: Background::default(),
            brightness: 1.0,
            light_dir: [-0.3, -0.4, -1.0],
            ambient: 0.35,
        }
    }
}

/// Domain-randomization ranges and renderer defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_points: usize,
    pub splat_radius: f64,
    pub object_radius_mm: [f64; 2],
    pub brightness: [f64; 2],
    pub shapes: Vec<ShapeKind>,
    pub textures: Vec<TextureKind>,
    pub backgrounds: Vec<BackgroundKind>,
    /// Resample video steps whose projected center leaves the inner image region.
    pub keep_in_view: bool,
    /// Inner-region margin as a fraction of the image size.
    pub view_margin: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_points: 400,
            splat_radius: 2.0,
            object_radius_mm: [40.0, 60.0],
            brightness: [0.7, 1.2],
            shapes: vec![ShapeKind::Ellipsoid, ShapeKind::Box, ShapeKind::Cylinder],
            textures: vec![TextureKind::Patches],
            backgrounds: vec![BackgroundKind::Solid, BackgroundKind::Gradient, BackgroundKind::Noise],
            keep_in_view: true,
            view_margin: 0.15,
        }
    }
}

/// What to generate for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub protocol: Protocol,
    pub length: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
}

impl SequenceSpec {
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        Self {
            protocol,
            length: protocol.default_length(),
            seed,
            width: 128,
            height: 128,
            intrinsics: default_intrinsics(128, 128),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        match self.protocol {
            Protocol::ModelnetPair if self.length != 2 => {
                Err(Error::invalid("length", "object-pair sequences have exactly 2 frames"))
            }
            _ if self.length < 2 => Err(Error::invalid("length", "need at least 2 frames")),
            _ if self.width == 0 || self.height == 0 => Err(Error::invalid("image size", "must be positive")),
            _ => Ok(()),
        }
    }
}

/// Focal length of twice the image width over a 128 px reference, centered principal point.
pub fn default_intrinsics(width: usize, height: usize) -> CameraIntrinsics {
    let f = 250.0 * width as f64 / 128.0;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub image: RgbImage,
    /// Row-major depth, mm, 0 where empty.
    pub depth: Vec<f32>,
    pub mask: Mask,
    pub pose: Pose,
    pub flow_to_next: Option<FlowField>,
}

impl RenderedFrame {
    /// True when no object pixel landed inside the image.
    pub fn is_empty(&self) -> bool {
        self.mask.count() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub spec: SequenceSpec,
    pub object: SceneObject,
    pub settings: RenderSettings,
    pub frames: Vec<RenderedFrame>,
}

impl SyntheticSequence {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn images(&self) -> Vec<RgbImage> {
        self.frames.iter().map(|f| f.image.clone()).collect()
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.frames.iter().map(|f| f.mask.clone()).collect()
    }

    /// Flow fields `t -> t+1` for every frame but the last.
    pub fn flows(&self) -> Vec<FlowField> {
        self.frames.iter().filter_map(|f| f.flow_to_next.clone()).collect()
    }
}

/// Uniform random rotation from a normalized Gaussian quaternion.
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let n = rand_distr::StandardNormal;
    loop {
        let q: [f64; 4] = [n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng)];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-9 {
            let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
            return uq.to_rotation_matrix().into_inner();
        }
    }
}

/// `Rx(bx) Ry(by) Rz(bz)`.
pub fn perturbation(beta: [f64; 3]) -> Matrix3<f64> {
    rot_x(beta[0]) * rot_y(beta[1]) * rot_z(beta[2])
}

/// Perturbation draw of the object-pair protocol, also returning the per-axis angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub first: Pose,
    pub second: Pose,
    pub beta: [f64; 3],
    pub delta: [f64; 3],
}

pub fn sample_modelnet_pair_detailed<R: Rng + ?Sized>(rng: &mut R) -> Result<PairSample> {
    let rot = Normal::new(0.0, PAIR_ROT_STD_DEG.to_radians()).map_err(|e| Error::domain(e.to_string()))?;
    let dxy = Normal::new(0.0, PAIR_XY_STD_MM).map_err(|e| Error::domain(e.to_string()))?;
    let dz = Normal::new(0.0, PAIR_Z_STD_MM).map_err(|e| Error::domain(e.to_string()))?;
    let r0 = uniform_rotation(rng);
    let t0 = Vector3::new(0.0, 0.0, PAIR_DEPTH_MM);
    for _ in 0..MAX_RETRIES {
        let beta = [rot.sample(rng), rot.sample(rng), rot.sample(rng)];
        let p = perturbation(beta);
        if rotation_angle(&p) >= PAIR_MAX_ANGLE_DEG.to_radians() {
            continue;
        }
        let delta = [dxy.sample(rng), dxy.sample(rng), dz.sample(rng)];
        let t1 = t0 + Vector3::from(delta);
        if t1.z <= 0.0 {
            continue;
        }
        return Ok(PairSample {
            first: Pose::new(r0, t0),
            second: Pose::new(p * r0, t1),
            beta,
            delta,
        });
    }
    Err(Error::domain("object-pair perturbation rejected too many times"))
}

/// First pose at 0.5 m with uniform rotation; second pose perturbed by Gaussian angles
/// (total angle below 45 degrees) and Gaussian camera-frame translation.
pub fn sample_modelnet_pair<R: Rng + ?Sized>(rng: &mut R) -> Result<(Pose, Pose)> {
    sample_modelnet_pair_detailed(rng).map(|s| (s.first, s.second))
}

/// One random-walk step of the video protocol: the next pose with its per-axis angles
/// and camera-frame offset.
pub fn video_step<R: Rng + ?Sized>(rng: &mut R, prev: &Pose) -> (Pose, [f64; 3], [f64; 3]) {
    let rot = Normal::new(0.0, VIDEO_ROT_STD_DEG.to_radians()).expect("positive std");
    let step = Normal::new(0.0, VIDEO_STEP_STD_MM).expect("positive std");
    let beta = [rot.sample(rng), rot.sample(rng), rot.sample(rng)];
    let delta = [step.sample(rng), step.sample(rng), step.sample(rng)];
    let next = Pose::new(perturbation(beta) * prev.rotation, prev.translation + Vector3::from(delta));
    (next, beta, delta)
}

/// First video pose: uniform rotation at `(0, 0, Z)` with `Z ~ U[400, 2000]` mm.
pub fn video_first_pose<R: Rng + ?Sized>(rng: &mut R) -> Pose {
    let z = rng.random_range(VIDEO_DEPTH_RANGE_MM.0..=VIDEO_DEPTH_RANGE_MM.1);
    Pose::new(uniform_rotation(rng), Vector3::new(0.0, 0.0, z))
}

/// Random-walk video poses. `accept` may veto a step, which is then redrawn.
pub fn sample_shapenet_video_with<R: Rng + ?Sized>(
    rng: &mut R,
    length: usize,
    mut accept: impl FnMut(&Pose) -> bool,
) -> Result<Vec<Pose>> {
    if length < 2 {
        return Err(Error::domain("a video needs at least 2 frames"));
    }
    let first = (0..MAX_RETRIES)
        .map(|_| video_first_pose(rng))
        .find(|p| accept(p))
        .ok_or_else(|| Error::domain("no acceptable first pose"))?;
    let mut poses = Vec::with_capacity(length);
    poses.push(first);
    while poses.len() < length {
        let prev = *poses.last().unwrap_or(&first);
        let next = (0..MAX_RETRIES)
            .map(|_| video_step(rng, &prev).0)
            .find(|p| p.translation.z > 0.0 && accept(p))
            .ok_or_else(|| Error::domain(format!("no acceptable pose for frame {}", poses.len())))?;
        poses.push(next);
    }
    Ok(poses)
}

pub fn sample_shapenet_video<R: Rng + ?Sized>(rng: &mut R, length: usize) -> Result<Vec<Pose>> {
    sample_shapenet_video_with(rng, length, |_| true)
}

/// Random shape, colored by a random affine map of object coordinates.
pub fn random_object<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig, object_id: u64) -> Result<SceneObject> {
    if cfg.shapes.is_empty() {
        return Err(Error::invalid("shapes", "at least one shape kind required"));
    }
    let n = cfg.num_points.max(MIN_POINTS);
    let radius = rng.random_range(cfg.object_radius_mm[0]..=cfg.object_radius_mm[1]);
    let axes = [
        radius,
        radius * rng.random_range(0.5..1.0),
        radius * rng.random_range(0.3..0.8),
    ];
    let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
    let gauss = rand_distr::StandardNormal;
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, nrm) = match kind {
            ShapeKind::Ellipsoid => {
                let d = loop {
                    let d = Vector3::<f64>::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng));
                    if d.norm() > 1e-9 {
                        break d.normalize();
                    }
                };
                let p = Vector3::new(axes[0] * d.x, axes[1] * d.y, axes[2] * d.z);
                let nrm = Vector3::new(d.x / axes[0], d.y / axes[1], d.z / axes[2]).normalize();
                (p, nrm)
            }
            ShapeKind::Box => {
                let h = [axes[0] * 0.8, axes[1] * 0.8, axes[2] * 0.8];
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Vector3::new(
                    rng.random_range(-h[0]..h[0]),
                    rng.random_range(-h[1]..h[1]),
                    rng.random_range(-h[2]..h[2]),
                );
                p[axis] = sign * h[axis];
                let mut nrm = Vector3::zeros();
                nrm[axis] = sign;
                (p, nrm)
            }
            ShapeKind::Cylinder => {
                let (r, hh) = (axes[1], axes[0]);
                let side = 2.0 * hh * r;
                let cap = r * r;
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random_range(0.0..side + cap) < side {
                    let p = Vector3::new(rng.random_range(-hh..hh), r * a.cos(), r * a.sin());
                    (p, Vector3::new(0.0, a.cos(), a.sin()))
                } else {
                    let rr = r * rng.random::<f64>().sqrt();
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let p = Vector3::new(sign * hh, rr * a.cos(), rr * a.sin());
                    (p, Vector3::new(sign, 0.0, 0.0))
                }
            }
        };
        points.push(p);
        normals.push(nrm);
    }
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n as f64;
    let texture = if cfg.textures.is_empty() {
        TextureKind::Gradient
    } else {
        cfg.textures[rng.random_range(0..cfg.textures.len())]
    };
    let base: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(0.25..0.75));
    let (mut m, gain) = (Matrix3::zeros(), if texture == TextureKind::Patches { 0.2 } else { 0.6 });
    for v in m.iter_mut() {
        *v = rng.random_range(-gain..gain);
    }
    let patches: Vec<(Vector3<f64>, [f64; 3])> = match texture {
        TextureKind::Gradient => Vec::new(),
        TextureKind::Patches => (0..PATCHES)
            .map(|_| {
                let d = Vector3::<f64>::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng));
                let c = [0, 1, 2].map(|_| rng.random_range(0.1..0.9));
                (d.normalize(), c)
            })
            .collect(),
    };
    let mut pts = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for p in &points {
        let c = p - mean;
        let tint = m * (c / radius);
        let color = patches
            .iter()
            .max_by(|a, b| a.0.dot(&c).total_cmp(&b.0.dot(&c)))
            .map_or(base, |(_, col)| *col);
        colors.push([0, 1, 2].map(|i| (color[i] + tint[i]).clamp(0.0, 1.0) as f32));
        pts.push([c.x, c.y, c.z]);
    }
    let obj = SceneObject {
        points: pts,
        colors,
        normals: normals.iter().map(|v| [v.x, v.y, v.z]).collect(),
        splat_radius: cfg.splat_radius,
        object_id,
    };
    obj.validate()?;
    Ok(obj)
}

pub fn random_settings<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig) -> RenderSettings {
    let color = |rng: &mut R| [0, 1, 2].map(|_| rng.random_range(0.0f32..1.0));
    let background = if cfg.backgrounds.is_empty() {
        Background::default()
    } else {
        match cfg.backgrounds[rng.random_range(0..cfg.backgrounds.len())] {
            BackgroundKind::Solid => Background::Solid { color: color(rng) },
            BackgroundKind::Gradient => Background::Gradient {
                from: color(rng),
                to: color(rng),
            },
            BackgroundKind::Noise => Background::Noise {
                mean: color(rng),
                amplitude: rng.random_range(0.05..0.3),
                seed: rng.random(),
            },
        }
    };
    RenderSettings {
        background,
        brightness: rng.random_range(cfg.brightness[0]..=cfg.brightness[1]),
        ..RenderSettings::default()
    }
}

/// Per-pixel nearest point index and depth.
struct Raster {
    winner: Vec<Option<u32>>,
    depth: Vec<f64>,
}

fn rasterize(obj: &SceneObject, pose: &Pose, k: &CameraIntrinsics, w: usize, h: usize) -> Result<Raster> {
    obj.validate()?;
    k.validate()?;
    let mut winner = vec![None; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let r = obj.splat_radius;
    let mut in_front = false;
    for i in 0..obj.points.len() {
        let pc = pose.transform_point(&obj.point(i));
        if pc.z <= 0.0 {
            continue;
        }
        in_front = true;
        if let Some(n) = obj.normals.get(i) {
            let nc = pose.rotation * Vector3::from(*n);
            if nc.dot(&pc) > 0.0 {
                continue;
            }
        }
        let (u, v, z) = project(k, &pc)?;
        let (x0, x1) = ((u - r).ceil().max(0.0), (u + r).floor().min(w as f64 - 1.0));
        let (y0, y1) = ((v - r).ceil().max(0.0), (v + r).floor().min(h as f64 - 1.0));
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let (dx, dy) = (x as f64 - u, y as f64 - v);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let idx = y * w + x;
                if z < depth[idx] {
                    depth[idx] = z;
                    winner[idx] = Some(i as u32);
                }
            }
        }
    }
    if !in_front {
        return Err(Error::domain("object is entirely behind the camera"));
    }
    Ok(Raster { winner, depth })
}

/// Renders on a black background at unit brightness.
pub fn render_frame(
    obj: &SceneObject,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<RenderedFrame> {
    render_frame_with(obj, pose, k, width, height, &RenderSettings::default())
}

pub fn render_frame_with(
    obj: &SceneObject,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
    settings: &RenderSettings,
) -> Result<RenderedFrame> {
    let raster = rasterize(obj, pose, k, width, height)?;
    let mut image = settings.background.fill(width, height);
    let mut depth = vec![0.0f32; width * height];
    let mut mask = Mask::empty(width, height, 0);
    let light = Vector3::from(settings.light_dir).normalize();
    for (idx, win) in raster.winner.iter().enumerate() {
        let Some(i) = *win else { continue };
        let i = i as usize;
        let shade = match obj.normals.get(i) {
            Some(n) => {
                let nc = pose.rotation * Vector3::from(*n);
                settings.ambient + (1.0 - settings.ambient) * nc.dot(&light).max(0.0)
            }
            None => 1.0,
        } * settings.brightness;
        let c = obj.colors[i].map(|v| (v as f64 * shade).clamp(0.0, 1.0) as f32);
        image.set(idx % width, idx / width, c);
        depth[idx] = raster.depth[idx] as f32;
        mask.data[idx] = true;
    }
    Ok(RenderedFrame {
        image,
        depth,
        mask,
        pose: *pose,
        flow_to_next: None,
    })
}

/// Flow of every visible point from `pose_t` to `pose_t1`, written at its frame-`t` pixel.
pub fn compute_gt_flow(
    obj: &SceneObject,
    pose_t: &Pose,
    pose_t1: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<FlowField> {
    let raster = rasterize(obj, pose_t, k, width, height)?;
    let mut flow = FlowField::zeros(width, height, 0, 1);
    for (idx, win) in raster.winner.iter().enumerate() {
        let Some(i) = *win else { continue };
        let p = obj.point(i as usize);
        let (u0, v0, _) = project(k, &pose_t.transform_point(&p))?;
        let (u1, v1, _) = project(k, &pose_t1.transform_point(&p))?;
        flow.data[idx] = [u1 - u0, v1 - v0];
    }
    Ok(flow)
}

/// Whether the projected center of `pose` stays inside the inner image region and the
/// object is comfortably in front of the camera.
pub fn center_in_view(pose: &Pose, k: &CameraIntrinsics, width: usize, height: usize, margin: f64, radius: f64) -> bool {
    if pose.translation.z <= 2.0 * radius {
        return false;
    }
    match project(k, &pose.translation) {
        Ok((u, v, _)) => {
            let (mx, my) = (margin * width as f64, margin * height as f64);
            u >= mx && u <= width as f64 - mx && v >= my && v <= height as f64 - my
        }
        Err(_) => false,
    }
}

/// Renders one complete sequence from its spec.
pub fn generate_sequence(spec: &SequenceSpec, cfg: &SynthConfig) -> Result<SyntheticSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let object = random_object(&mut rng, cfg, spec.seed)?;
    let settings = random_settings(&mut rng, cfg);
    let k = spec.intrinsics;
    let radius = object.radius();
    let poses = match spec.protocol {
        Protocol::ModelnetPair => {
            let (a, b) = sample_modelnet_pair(&mut rng)?;
            vec![a, b]
        }
        Protocol::ShapenetVideo if cfg.keep_in_view => {
            sample_shapenet_video_with(&mut rng, spec.length, |p| {
                center_in_view(p, &k, spec.width, spec.height, cfg.view_margin, radius)
            })?
        }
        Protocol::ShapenetVideo => sample_shapenet_video(&mut rng, spec.length)?,
    };
    let mut frames = Vec::with_capacity(poses.len());
    for (t, pose) in poses.iter().enumerate() {
        let mut f = render_frame_with(&object, pose, &k, spec.width, spec.height, &settings)
            .map_err(|e| e.at_frame(t))?;
        f.mask.frame_index = t;
        if let Some(next) = poses.get(t + 1) {
            let mut flow = compute_gt_flow(&object, pose, next, &k, spec.width, spec.height)
                .map_err(|e| e.at_frame(t))?;
            flow.from_index = t;
            flow.to_index = t + 1;
            f.flow_to_next = Some(flow);
        }
        frames.push(f);
    }
    Ok(SyntheticSequence {
        spec: spec.clone(),
        object,
        settings,
        frames,
    })
}

/// SplitMix64 finalizer of `master ^ golden * (index + 1)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dataset request as read from a generation config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub protocol: Protocol,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn default_size() -> usize {
    128
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("count", "must be >= 1"));
        }
        self.specs().first().map(|s| s.validate()).unwrap_or(Ok(()))
    }

    pub fn specs(&self) -> Vec<SequenceSpec> {
        let k = self
            .intrinsics
            .unwrap_or_else(|| default_intrinsics(self.width, self.height));
        (0..self.count)
            .map(|i| SequenceSpec {
                protocol: self.protocol,
                length: self.length.unwrap_or(self.protocol.default_length()),
                seed: derive_seed(self.seed, i as u64),
                width: self.width,
                height: self.height,
                intrinsics: k,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sequences: Vec<ManifestEntry>,
    pub synth: SynthConfig,
    /// Effective request, when generated from a config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DatasetConfig>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sequence_id(index: usize) -> String {
    format!("seq_{index:05}")
}

/// Renders every spec and writes it under `out_dir/<id>`, plus `manifest.json`.
pub fn generate_dataset(specs: &[SequenceSpec], cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    generate_into(specs, cfg, None, out_dir)
}

/// Generates every sequence requested by `cfg`; the manifest echoes the config.
pub fn generate_from_config(cfg: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    generate_into(&cfg.specs(), &cfg.synth, Some(cfg.clone()), out_dir)
}

fn generate_into(specs: &[SequenceSpec], cfg: &SynthConfig, config: Option<DatasetConfig>, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let id = sequence_id(i);
        let seq = generate_sequence(spec, cfg)?;
        crate::io::write_sequence(&out_dir.join(&id), &seq)?;
        entries.push(ManifestEntry {
            id,
            seed: spec.seed,
            protocol: spec.protocol,
            length: spec.length,
        });
    }
    let manifest = Manifest {
        sequences: entries,
        synth: cfg.clone(),
        config,
    };
    crate::io::write_json_atomic(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{decode_translation, encode_translation, CropSpec};
    use crate::geometry::BBox;
    use crate::segmask::warp_mask;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap()
    }

    fn single_point_object() -> SceneObject {
        SceneObject {
            points: vec![[0.0; 3]; MIN_POINTS],
            colors: vec![[1.0; 3]; MIN_POINTS],
            normals: vec![],
            splat_radius: 2.0,
            object_id: 0,
        }
    }

    #[test]
    fn single_point_splat() {
        let f = render_frame(&single_point_object(), &Pose::identity_at(Vector3::new(0.0, 0.0, 500.0)), &k(), 128, 128)
            .unwrap();
        assert_eq!(f.depth[64 * 128 + 64], 500.0);
        assert_eq!(f.mask.count(), 13);
        assert_eq!(f.mask.tight_bbox(), Some(BBox::new(62, 62, 5, 5)));
        for (d, m) in f.depth.iter().zip(&f.mask.data) {
            assert_eq!(*d > 0.0, *m);
        }
    }

    #[test]
    fn behind_camera_is_error() {
        let r = render_frame(&single_point_object(), &Pose::identity_at(Vector3::new(0.0, 0.0, -5.0)), &k(), 32, 32);
        assert!(r.is_err());
        let out = render_frame(&single_point_object(), &Pose::identity_at(Vector3::new(1e4, 0.0, 500.0)), &k(), 32, 32)
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn render_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obj = random_object(&mut rng, &SynthConfig::default(), 1).unwrap();
        let set = random_settings(&mut rng, &SynthConfig::default());
        let pose = Pose::new(uniform_rotation(&mut rng), Vector3::new(0.0, 0.0, 500.0));
        let a = render_frame_with(&obj, &pose, &k(), 64, 64, &set).unwrap();
        let b = render_frame_with(&obj, &pose, &k(), 64, 64, &set).unwrap();
        assert_eq!(a, b);
        assert!(a.mask.count() > 0);
    }

    #[test]
    fn flow_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let obj = random_object(&mut rng, &SynthConfig::default(), 1).unwrap();
        let p0 = Pose::new(uniform_rotation(&mut rng), Vector3::new(0.0, 0.0, 500.0));
        let f = compute_gt_flow(&obj, &p0, &p0, &k(), 128, 128).unwrap();
        assert!(f.data.iter().all(|d| *d == [0.0, 0.0]));

        let flat = SceneObject {
            points: (0..MIN_POINTS).map(|i| [i as f64 - 25.0, 0.0, 0.0]).collect(),
            ..single_point_object()
        };
        let p0 = Pose::identity_at(Vector3::new(0.0, 0.0, 500.0));
        let p1 = Pose::identity_at(Vector3::new(10.0, 0.0, 500.0));
        let f = compute_gt_flow(&flat, &p0, &p1, &k(), 128, 128).unwrap();
        let mask = render_frame(&flat, &p0, &k(), 128, 128).unwrap().mask;
        for (d, m) in f.data.iter().zip(&mask.data) {
            if *m {
                assert!((d[0] - 2.0).abs() < 1e-12 && d[1].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warped_mask_overlaps_next() {
        let spec = SequenceSpec {
            length: 6,
            ..SequenceSpec::new(Protocol::ShapenetVideo, 21)
        };
        let cfg = SynthConfig {
            num_points: 3000,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obj = random_object(&mut rng, &cfg, 0).unwrap();
        let p0 = Pose::new(uniform_rotation(&mut rng), Vector3::new(0.0, 0.0, 600.0));
        let p1 = Pose::new(rot_y(0.05) * p0.rotation, p0.translation + Vector3::new(5.0, -3.0, 10.0));
        let k = spec.intrinsics;
        let f0 = render_frame(&obj, &p0, &k, 128, 128).unwrap();
        let f1 = render_frame(&obj, &p1, &k, 128, 128).unwrap();
        let mut flow = compute_gt_flow(&obj, &p0, &p1, &k, 128, 128).unwrap();
        flow.from_index = 0;
        let warped = warp_mask(&f0.mask, &flow).unwrap();
        let inter = warped.data.iter().zip(&f1.mask.data).filter(|(a, b)| **a && **b).count();
        let union = warped.data.iter().zip(&f1.mask.data).filter(|(a, b)| **a || **b).count();
        assert!(inter as f64 / union as f64 >= 0.8, "{inter}/{union}");
    }

    #[test]
    fn pair_sampler_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let s = sample_modelnet_pair_detailed(&mut rng).unwrap();
            assert_eq!(s.first.translation, Vector3::new(0.0, 0.0, 500.0));
            let rel = s.second.rotation * s.first.rotation.transpose();
            assert!(rotation_angle(&rel) < 45f64.to_radians());
        }
    }

    #[test]
    fn video_sampler_basic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_shapenet_video(&mut rng, 2).unwrap().len(), 2);
        for _ in 0..1000 {
            let z = sample_shapenet_video(&mut rng, 2).unwrap()[0].translation.z;
            assert!((400.0..=2000.0).contains(&z));
        }
        assert!(sample_shapenet_video(&mut rng, 1).is_err());
    }

    #[test]
    fn gt_codes_round_trip() {
        let spec = SequenceSpec {
            length: 10,
            ..SequenceSpec::new(Protocol::ShapenetVideo, 77)
        };
        let seq = generate_sequence(&spec, &SynthConfig::default()).unwrap();
        let crop = CropSpec::new(BBox::new(10, 10, 60, 50), 32, 32).unwrap();
        for w in seq.frames.windows(2) {
            let (a, b) = (&w[0].pose, &w[1].pose);
            let code = encode_translation(&spec.intrinsics, a, b, &crop).unwrap();
            let (u, v, z) = project(&spec.intrinsics, &a.translation).unwrap();
            let step = decode_translation(&spec.intrinsics, (u, v), z, &code, &crop).unwrap();
            assert!((step.delta_t - (b.translation - a.translation)).norm() < 1e-9);
        }
    }

    #[test]
    fn derived_seeds_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000 {
            assert!(seen.insert(derive_seed(42, i)));
        }
    }

    #[test]
    fn pair_spec_requires_two_frames() {
        let mut s = SequenceSpec::new(Protocol::ModelnetPair, 1);
        assert!(s.validate().is_ok());
        s.length = 3;
        assert!(s.validate().is_err());
    }
}
