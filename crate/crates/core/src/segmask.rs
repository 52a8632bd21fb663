//! 2D object tracking by mask propagation and preparation of aligned network inputs.
//!
//! One propagation step: refine a mask inside the current box, splat it forward with
//! optical flow, take the box of the warped mask, refine again inside that box. The
//! segmentation and flow networks are abstracted behind [`MaskRefiner`] and
//! [`FlowProvider`]; the shipped implementations are oracles over synthetic ground truth.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, crop_union, project, CameraIntrinsics, CropSpec, Pose};
use crate::raster::RgbImage;

pub use crate::geometry::BBox;

/// Binary object mask for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
    pub frame_index: usize,
}

impl Mask {
    pub fn empty(width: usize, height: usize, frame_index: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
            frame_index,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Tight box around the foreground, `None` when empty.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| {
            BBox::new(
                x0 as i64,
                y0 as i64,
                (x1 - x0 + 1) as i64,
                (y1 - y0 + 1) as i64,
            )
        })
    }

    /// Keeps only pixels inside `bbox`.
    pub fn restricted_to(&self, bbox: &BBox) -> Mask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !bbox.contains_pixel(x as i64, y as i64) {
                    out.set(x, y, false);
                }
            }
        }
        out
    }

    /// Chebyshev dilation (`radius > 0`) or erosion (`radius < 0`).
    pub fn morph(&self, radius: i32) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius.unsigned_abs() as i64;
        let dilate = radius > 0;
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                let mut hit = !dilate;
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        let v = nx >= 0
                            && ny >= 0
                            && nx < w
                            && ny < h
                            && self.data[(ny * w + nx) as usize];
                        if dilate && v {
                            hit = true;
                            break 'scan;
                        }
                        if !dilate && !v {
                            hit = false;
                            break 'scan;
                        }
                    }
                }
                out.data[(y * w + x) as usize] = hit;
            }
        }
        out
    }
}

/// Dense displacement field `from_index -> to_index`, pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 2]>,
    pub from_index: usize,
    pub to_index: usize,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize, from_index: usize, to_index: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width * height],
            from_index,
            to_index,
        }
    }

    pub fn uniform(width: usize, height: usize, from_index: usize, to_index: usize, d: [f64; 2]) -> Self {
        Self {
            data: vec![d; width * height],
            ..Self::zeros(width, height, from_index, to_index)
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.data[y * self.width + x]
    }
}

/// Forward splat of every foreground pixel to `round(p + flow(p))`; targets outside the
/// image are dropped.
pub fn warp_mask(mask: &Mask, flow: &FlowField) -> Result<Mask> {
    if mask.width != flow.width || mask.height != flow.height {
        return Err(Error::domain(format!(
            "mask {}x{} and flow {}x{} differ in size",
            mask.width, mask.height, flow.width, flow.height
        )));
    }
    if mask.frame_index != flow.from_index {
        return Err(Error::domain(format!(
            "mask is for frame {} but flow starts at frame {}",
            mask.frame_index, flow.from_index
        )));
    }
    if flow.data.iter().any(|d| !d[0].is_finite() || !d[1].is_finite()) {
        return Err(Error::domain("flow field has non-finite values"));
    }
    let mut out = Mask::empty(mask.width, mask.height, flow.to_index);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let [fx, fy] = flow.get(x, y);
            let tx = (x as f64 + fx).round();
            let ty = (y as f64 + fy).round();
            if tx >= 0.0 && ty >= 0.0 && tx < mask.width as f64 && ty < mask.height as f64 {
                out.set(tx as usize, ty as usize, true);
            }
        }
    }
    Ok(out)
}

/// Tight foreground box grown by `pad` pixels per side, clamped to the image.
pub fn mask_to_bbox(mask: &Mask, pad: usize) -> Result<BBox> {
    let tight = mask.tight_bbox().ok_or_else(|| Error::TrackingLost {
        frame: mask.frame_index.saturating_sub(1),
        reason: format!("mask for frame {} is empty", mask.frame_index),
    })?;
    let p = pad as i64;
    Ok(BBox::new(tight.left - p, tight.top - p, tight.width + 2 * p, tight.height + 2 * p)
        .clamped(mask.width, mask.height))
}

/// How far a box is grown around the tight mask box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum BoxPadding {
    Pixels(usize),
    /// Fraction of the tight box diagonal, rounded up.
    DiagonalFraction(f64),
}

impl Default for BoxPadding {
    fn default() -> Self {
        BoxPadding::DiagonalFraction(0.1)
    }
}

impl BoxPadding {
    pub fn pixels_for(&self, tight: &BBox) -> usize {
        match *self {
            BoxPadding::Pixels(p) => p,
            BoxPadding::DiagonalFraction(f) => {
                let diag = ((tight.width * tight.width + tight.height * tight.height) as f64).sqrt();
                (f * diag).ceil().max(0.0) as usize
            }
        }
    }
}

/// Box of `mask` padded according to `padding`.
pub fn padded_bbox(mask: &Mask, padding: BoxPadding) -> Result<BBox> {
    let pad = mask.tight_bbox().map(|t| padding.pixels_for(&t)).unwrap_or(0);
    mask_to_bbox(mask, pad)
}

/// Segmentation network stand-in: a mask for the object inside `bbox`.
pub trait MaskRefiner {
    fn refine(&self, image: &RgbImage, frame_index: usize, bbox: &BBox) -> Result<Mask>;
}

/// Optical-flow network stand-in.
pub trait FlowProvider {
    fn flow(
        &self,
        from: &RgbImage,
        from_index: usize,
        to: &RgbImage,
        to_index: usize,
    ) -> Result<FlowField>;
}

/// Returns the ground-truth instance mask restricted to the query box.
#[derive(Debug, Clone)]
pub struct OracleMaskRefiner {
    pub masks: Vec<Mask>,
}

impl MaskRefiner for OracleMaskRefiner {
    fn refine(&self, _image: &RgbImage, frame_index: usize, bbox: &BBox) -> Result<Mask> {
        let m = self
            .masks
            .get(frame_index)
            .ok_or_else(|| Error::domain(format!("no ground-truth mask for frame {frame_index}")))?;
        let mut out = m.restricted_to(bbox);
        out.frame_index = frame_index;
        Ok(out)
    }
}

/// Ground-truth mask dilated (`morph_radius > 0`) or eroded (`< 0`) before restriction.
#[derive(Debug, Clone)]
pub struct NoisyMaskRefiner {
    pub masks: Vec<Mask>,
    pub morph_radius: i32,
}

impl MaskRefiner for NoisyMaskRefiner {
    fn refine(&self, _image: &RgbImage, frame_index: usize, bbox: &BBox) -> Result<Mask> {
        let m = self
            .masks
            .get(frame_index)
            .ok_or_else(|| Error::domain(format!("no ground-truth mask for frame {frame_index}")))?;
        let mut out = m.morph(self.morph_radius).restricted_to(bbox);
        out.frame_index = frame_index;
        Ok(out)
    }
}

/// Ground-truth flow fields; `flows[i]` maps frame `i` to `i + 1`.
#[derive(Debug, Clone)]
pub struct OracleFlow {
    pub flows: Vec<FlowField>,
}

impl FlowProvider for OracleFlow {
    fn flow(&self, from: &RgbImage, from_index: usize, _to: &RgbImage, to_index: usize) -> Result<FlowField> {
        if to_index != from_index + 1 {
            return Err(Error::domain("oracle flow only covers consecutive frames"));
        }
        match self.flows.get(from_index) {
            Some(f) => Ok(f.clone()),
            None => Ok(FlowField::zeros(from.width, from.height, from_index, to_index)),
        }
    }
}

/// Ground-truth flow plus i.i.d. Gaussian noise, reproducible per frame.
#[derive(Debug, Clone)]
pub struct NoisyFlow {
    pub inner: OracleFlow,
    pub sigma_px: f64,
    pub seed: u64,
}

impl FlowProvider for NoisyFlow {
    fn flow(&self, from: &RgbImage, from_index: usize, to: &RgbImage, to_index: usize) -> Result<FlowField> {
        let mut f = self.inner.flow(from, from_index, to, to_index)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (from_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = Normal::new(0.0, self.sigma_px.max(0.0)).map_err(|e| Error::domain(e.to_string()))?;
        for d in &mut f.data {
            d[0] += n.sample(&mut rng);
            d[1] += n.sample(&mut rng);
        }
        Ok(f)
    }
}

/// Exact rigid flow from per-pixel depth and known poses: each pixel is lifted with its
/// depth, moved with the relative object motion and reprojected. Pixels with zero depth
/// get zero flow.
#[derive(Debug, Clone)]
pub struct RigidDepthFlow {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<Pose>,
    /// Per-frame row-major depth, mm.
    pub depths: Vec<Vec<f32>>,
    pub width: usize,
    pub height: usize,
}

impl FlowProvider for RigidDepthFlow {
    fn flow(&self, _from: &RgbImage, from_index: usize, _to: &RgbImage, to_index: usize) -> Result<FlowField> {
        let (p0, p1) = match (self.poses.get(from_index), self.poses.get(to_index)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::domain("flow requested outside the pose list")),
        };
        let depth = self
            .depths
            .get(from_index)
            .ok_or_else(|| Error::domain(format!("no depth for frame {from_index}")))?;
        let rel_r = p1.rotation * p0.rotation.transpose();
        let mut f = FlowField::zeros(self.width, self.height, from_index, to_index);
        for y in 0..self.height {
            for x in 0..self.width {
                let z = depth[y * self.width + x] as f64;
                if z <= 0.0 {
                    continue;
                }
                let p = backproject(&self.intrinsics, x as f64, y as f64, z)?;
                let q: Vector3<f64> = rel_r * (p - p0.translation) + p1.translation;
                if let Ok((u, v, _)) = project(&self.intrinsics, &q) {
                    f.data[y * self.width + x] = [u - x as f64, v - y as f64];
                }
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmaskConfig {
    /// Padding applied to boxes of warped masks.
    pub padding: BoxPadding,
    /// Padding applied to the refined first-frame mask to form `B_0`, when starting from a mask.
    pub initial_padding: BoxPadding,
    /// Erosion radius applied to the refined mask before warping.
    pub erode_before_warp: usize,
}

impl Default for SegmaskConfig {
    fn default() -> Self {
        Self {
            padding: BoxPadding::default(),
            initial_padding: BoxPadding::default(),
            erode_before_warp: 0,
        }
    }
}

/// Output of one propagation step.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// Box for frame `t + 1`.
    pub bbox: BBox,
    /// Refined mask for frame `t + 1`.
    pub mask: Mask,
    /// Flow-warped estimate before refinement.
    pub warped: Mask,
}

/// Advances from an already refined mask of frame `t` to frame `t + 1`.
pub fn propagate_mask(
    mask_t: &Mask,
    frame_t: &RgbImage,
    frame_t1: &RgbImage,
    flow: &dyn FlowProvider,
    refiner: &dyn MaskRefiner,
    cfg: &SegmaskConfig,
) -> Result<Propagation> {
    let t = mask_t.frame_index;
    let source = if cfg.erode_before_warp > 0 {
        let eroded = mask_t.morph(-(cfg.erode_before_warp as i32));
        if eroded.count() > 0 {
            eroded
        } else {
            mask_t.clone()
        }
    } else {
        mask_t.clone()
    };
    let f = flow.flow(frame_t, t, frame_t1, t + 1)?;
    let warped = warp_mask(&source, &f)?;
    if warped.count() == 0 {
        return Err(Error::TrackingLost {
            frame: t,
            reason: format!("warped mask for frame {} is empty", t + 1),
        });
    }
    let bbox = padded_bbox(&warped, cfg.padding)?;
    let mask = refiner.refine(frame_t1, t + 1, &bbox)?;
    if mask.count() == 0 {
        return Err(Error::TrackingLost {
            frame: t,
            reason: format!("refined mask for frame {} is empty", t + 1),
        });
    }
    Ok(Propagation { bbox, mask, warped })
}

/// `M_t = refine(B_t)`, `M^_{t+1} = warp(M_t)`, `B_{t+1} = box(M^_{t+1})`,
/// `M_{t+1} = refine(B_{t+1})`.
pub fn propagate_step(
    bbox_t: &BBox,
    t: usize,
    frame_t: &RgbImage,
    frame_t1: &RgbImage,
    flow: &dyn FlowProvider,
    refiner: &dyn MaskRefiner,
    cfg: &SegmaskConfig,
) -> Result<Propagation> {
    let mask_t = refiner.refine(frame_t, t, bbox_t)?;
    if mask_t.count() == 0 {
        return Err(Error::TrackingLost {
            frame: t.saturating_sub(1),
            reason: format!("refined mask for frame {t} is empty"),
        });
    }
    propagate_mask(&mask_t, frame_t, frame_t1, flow, refiner, cfg)
}

/// Runs propagation over a whole sequence starting from box `bbox0` on frame 0.
/// Returns per-frame `(box, refined mask)`.
pub fn track_boxes(
    frames: &[RgbImage],
    bbox0: BBox,
    flow: &dyn FlowProvider,
    refiner: &dyn MaskRefiner,
    cfg: &SegmaskConfig,
) -> Result<Vec<(BBox, Mask)>> {
    let first = frames.first().ok_or_else(|| Error::domain("no frames to track"))?;
    let mask0 = refiner.refine(first, 0, &bbox0)?;
    if mask0.count() == 0 {
        return Err(Error::TrackingLost {
            frame: 0,
            reason: "initial box contains no object".into(),
        });
    }
    let mut out = vec![(bbox0, mask0)];
    for t in 0..frames.len() - 1 {
        let step = propagate_mask(&out[t].1, &frames[t], &frames[t + 1], flow, refiner, cfg)?;
        out.push((step.bbox, step.mask));
    }
    Ok(out)
}

/// Aligned, background-masked crops for a window of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInputs {
    /// One `3 x input_h x input_w` planar image per frame.
    pub crops: Vec<Vec<f32>>,
    pub crop: CropSpec,
}

/// Masks out background, crops every frame with the union of the window's boxes and
/// resamples bilinearly to `input_w x input_h`.
pub fn prepare_network_inputs(
    frames: &[&RgbImage],
    masks: &[&Mask],
    boxes: &[BBox],
    input_w: usize,
    input_h: usize,
    margin: f64,
) -> Result<NetworkInputs> {
    if frames.len() < 2 {
        return Err(Error::domain("a window needs at least two frames"));
    }
    if masks.len() != frames.len() || boxes.len() != frames.len() {
        return Err(Error::domain("frames, masks and boxes must have equal counts"));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    for (f, m) in frames.iter().zip(masks) {
        if f.width != w || f.height != h || m.width != w || m.height != h {
            return Err(Error::domain("window frames and masks must share one size"));
        }
    }
    let crop = crop_union(boxes, w, h, input_w, input_h, margin)?;
    let crops = frames
        .iter()
        .zip(masks)
        .map(|(f, m)| resample_masked(f, m, &crop))
        .collect();
    Ok(NetworkInputs { crops, crop })
}

fn resample_masked(image: &RgbImage, mask: &Mask, crop: &CropSpec) -> Vec<f32> {
    let (iw, ih) = (crop.input_w, crop.input_h);
    let mut out = vec![0.0f32; 3 * iw * ih];
    let fetch = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= image.width as i64 || y >= image.height as i64 {
            return 0.0;
        }
        let (x, y) = (x as usize, y as usize);
        if !mask.get(x, y) {
            return 0.0;
        }
        image.data[(y * image.width + x) * 3 + c] as f64
    };
    for i in 0..ih {
        let sy = crop.bbox.top as f64 + (i as f64 + 0.5) * crop.alpha_v - 0.5;
        let y0 = sy.floor();
        let wy = sy - y0;
        for j in 0..iw {
            let sx = crop.bbox.left as f64 + (j as f64 + 0.5) * crop.alpha_u - 0.5;
            let x0 = sx.floor();
            let wx = sx - x0;
            let (x0, y0i) = (x0 as i64, y0 as i64);
            for c in 0..3 {
                let v = (1.0 - wy) * ((1.0 - wx) * fetch(x0, y0i, c) + wx * fetch(x0 + 1, y0i, c))
                    + wy * ((1.0 - wx) * fetch(x0, y0i + 1, c) + wx * fetch(x0 + 1, y0i + 1, c));
                out[(c * ih + i) * iw + j] = v as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn square_mask(w: usize, h: usize, b: BBox, frame: usize) -> Mask {
        let mut m = Mask::empty(w, h, frame);
        for y in b.top..b.bottom() {
            for x in b.left..b.right() {
                m.set(x as usize, y as usize, true);
            }
        }
        m
    }

    #[test]
    fn zero_flow_is_identity() {
        let m = square_mask(16, 16, BBox::new(3, 4, 5, 6), 0);
        let w = warp_mask(&m, &FlowField::zeros(16, 16, 0, 1)).unwrap();
        assert_eq!(w.data, m.data);
        assert_eq!(w.frame_index, 1);
    }

    #[test]
    fn uniform_flow_shifts() {
        let m = square_mask(32, 32, BBox::new(5, 5, 8, 8), 0);
        let w = warp_mask(&m, &FlowField::uniform(32, 32, 0, 1, [5.0, 0.0])).unwrap();
        assert_eq!(w, square_mask(32, 32, BBox::new(10, 5, 8, 8), 1));
    }

    #[test]
    fn warp_matches_brute_force_splat() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut m = Mask::empty(16, 16, 2);
            m.data.iter_mut().for_each(|v| *v = rng.random_bool(0.3));
            let mut f = FlowField::zeros(16, 16, 2, 3);
            f.data
                .iter_mut()
                .for_each(|d| *d = [rng.random_range(-4..=4) as f64, rng.random_range(-4..=4) as f64]);
            let got = warp_mask(&m, &f).unwrap();
            // target-centric oracle: a pixel is set iff some source lands on it
            for ty in 0..16i64 {
                for tx in 0..16i64 {
                    let mut hit = false;
                    for sy in 0..16 {
                        for sx in 0..16 {
                            let d = f.get(sx, sy);
                            if m.get(sx, sy) && sx as i64 + d[0] as i64 == tx && sy as i64 + d[1] as i64 == ty {
                                hit = true;
                            }
                        }
                    }
                    assert_eq!(got.get(tx as usize, ty as usize), hit);
                }
            }
        }
    }

    #[test]
    fn warp_rejects_mismatch() {
        let m = Mask::empty(8, 8, 0);
        assert!(warp_mask(&m, &FlowField::zeros(8, 9, 0, 1)).is_err());
        assert!(warp_mask(&m, &FlowField::zeros(8, 8, 1, 2)).is_err());
    }

    #[test]
    fn bbox_examples() {
        let mut m = Mask::empty(32, 32, 0);
        m.set(7, 3, true);
        assert_eq!(mask_to_bbox(&m, 2).unwrap(), BBox::new(5, 1, 5, 5));
        let full = Mask {
            data: vec![true; 32 * 32],
            ..Mask::empty(32, 32, 0)
        };
        assert_eq!(mask_to_bbox(&full, 0).unwrap(), BBox::new(0, 0, 32, 32));
        assert!(matches!(
            mask_to_bbox(&Mask::empty(4, 4, 3), 1),
            Err(Error::TrackingLost { .. })
        ));
    }

    #[test]
    fn bbox_contains_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mut m = Mask::empty(20, 12, 0);
            let n = rng.random_range(1..20);
            for _ in 0..n {
                m.set(rng.random_range(0..20), rng.random_range(0..12), true);
            }
            let pad = rng.random_range(0..4);
            let b = mask_to_bbox(&m, pad).unwrap();
            for y in 0..12 {
                for x in 0..20 {
                    if m.get(x, y) {
                        assert!(b.contains_pixel(x as i64, y as i64));
                    }
                }
            }
        }
    }

    #[test]
    fn static_object_keeps_box() {
        let gt = square_mask(32, 32, BBox::new(8, 8, 10, 10), 0);
        let masks = vec![gt.clone(), Mask { frame_index: 1, ..gt.clone() }];
        let refiner = OracleMaskRefiner { masks };
        let flow = OracleFlow {
            flows: vec![FlowField::zeros(32, 32, 0, 1)],
        };
        let img = RgbImage::new(32, 32);
        let cfg = SegmaskConfig {
            padding: BoxPadding::Pixels(2),
            ..Default::default()
        };
        let b0 = BBox::new(6, 6, 14, 14);
        let step = propagate_step(&b0, 0, &img, &img, &flow, &refiner, &cfg).unwrap();
        assert_eq!(step.bbox, b0);
        assert_eq!(step.mask.count(), 100);
    }

    #[test]
    fn lost_track_reports_frame() {
        let gt = square_mask(16, 16, BBox::new(2, 2, 3, 3), 0);
        let refiner = OracleMaskRefiner {
            masks: vec![gt.clone(), gt],
        };
        let flow = OracleFlow {
            flows: vec![FlowField::uniform(16, 16, 0, 1, [40.0, 0.0])],
        };
        let img = RgbImage::new(16, 16);
        let err = propagate_step(&BBox::new(0, 0, 8, 8), 0, &img, &img, &flow, &refiner, &SegmaskConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::TrackingLost { frame: 0, .. }));
    }

    #[test]
    fn network_inputs_mask_and_share_crop() {
        let mut img = RgbImage::new(32, 32);
        img.data.iter_mut().for_each(|v| *v = 0.7);
        let m = square_mask(32, 32, BBox::new(4, 4, 10, 10), 0);
        let b = BBox::new(4, 4, 10, 10);
        let out = prepare_network_inputs(&[&img, &img], &[&m, &m], &[b, b], 10, 10, 0.0).unwrap();
        assert_eq!(out.crop.bbox, b);
        assert_eq!(out.crops[0], out.crops[1]);
        assert!(out.crops[0].iter().all(|&v| (v - 0.7).abs() < 1e-6));

        let b2 = BBox::new(0, 0, 10, 10);
        let b3 = BBox::new(20, 20, 10, 10);
        let empty = Mask::empty(32, 32, 0);
        let out = prepare_network_inputs(&[&img, &img], &[&empty, &empty], &[b2, b3], 16, 16, 0.0).unwrap();
        assert_eq!(out.crop.bbox, BBox::new(0, 0, 30, 30));
        assert!(out.crops.iter().flatten().all(|&v| v == 0.0));

        assert!(prepare_network_inputs(&[&img], &[&m], &[b], 8, 8, 0.0).is_err());
    }

    #[test]
    fn morph_grows_and_shrinks() {
        let m = square_mask(16, 16, BBox::new(5, 5, 4, 4), 0);
        assert_eq!(m.morph(1).tight_bbox(), Some(BBox::new(4, 4, 6, 6)));
        assert_eq!(m.morph(-1).tight_bbox(), Some(BBox::new(6, 6, 2, 2)));
    }
}
