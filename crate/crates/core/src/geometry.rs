//! Closed-form pose mathematics.
//!
//! Relative translation between two frames is carried by the 2D displacement of the
//! projected object center and a normalized depth ratio, both expressed relative to the
//! crop the network looks at:
//!
//! ```text
//! dU = U_t - U_{t-1}             dV = V_t - V_{t-1}
//! S  = Z_t / Z_{t-1} - 1
//! dU = alpha_u * input_w * du    dV = alpha_v * input_h * dv      (alpha = crop / input)
//! S  = (alpha_u + alpha_v) / 2 * s
//! ```
//!
//! Relative rotation is `dR = R_t * R_{t-1}^T`, encoded as an axis-angle vector.
//!
//! All translations are millimeters, all angles radians. Everything is `f64`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Orthonormality tolerance applied when validating rotation inputs.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Minimum distance of the rotation angle from pi for axis-angle extraction.
pub const AXIS_ANGLE_PI_MARGIN: f64 = 1e-6;

/// Minimum distance of the middle Euler angle from +-pi/2.
pub const GIMBAL_MARGIN: f64 = 1e-3;

/// Pinhole intrinsics, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::domain(format!(
                "intrinsics need finite values and positive focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid transform of the object in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    /// Object center in camera coordinates, mm.
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity_at(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// Maps an object-frame point into the camera frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn depth(&self) -> f64 {
        self.translation.z
    }
}

/// Center displacement in original-image pixels plus normalized depth offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMotion {
    pub du_px: f64,
    pub dv_px: f64,
    pub s: f64,
}

/// The relative motion a network predicts for one frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionCode {
    /// Horizontal displacement as a fraction of the crop width.
    pub du: f64,
    /// Vertical displacement as a fraction of the crop height.
    pub dv: f64,
    /// Depth offset in crop space.
    pub s: f64,
    /// Axis-angle relative rotation, radians.
    pub omega: [f64; 3],
}

impl MotionCode {
    pub fn translation(&self) -> TranslationCode {
        TranslationCode {
            du: self.du,
            dv: self.dv,
            s: self.s,
        }
    }

    pub fn omega(&self) -> Vector3<f64> {
        Vector3::from(self.omega)
    }

    /// Network output order: `[omega_x, omega_y, omega_z, du, dv, s]`.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega[0],
            self.omega[1],
            self.omega[2],
            self.du,
            self.dv,
            self.s,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            omega: [v[0], v[1], v[2]],
            du: v[3],
            dv: v[4],
            s: v[5],
        }
    }
}

/// Translation part of a [`MotionCode`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TranslationCode {
    pub du: f64,
    pub dv: f64,
    pub s: f64,
}

/// Integer pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub left: i64,
    pub top: i64,
    pub width: i64,
    pub height: i64,
}

impl BBox {
    pub fn new(left: i64, top: i64, width: i64, height: i64) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    /// Exclusive right edge.
    pub fn right(&self) -> i64 {
        self.left + self.width
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> i64 {
        self.top + self.height
    }

    pub fn is_degenerate(&self) -> bool {
        self.width < 1 || self.height < 1
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.left >= self.left
            && other.top >= self.top
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains_pixel(&self, x: i64, y: i64) -> bool {
        x >= self.left && x < self.right() && y >= self.top && y < self.bottom()
    }

    pub fn area(&self) -> i64 {
        self.width.max(0) * self.height.max(0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let l = self.left.max(other.left);
        let t = self.top.max(other.top);
        let r = self.right().min(other.right());
        let b = self.bottom().min(other.bottom());
        let inter = (r - l).max(0) * (b - t).max(0);
        let union = self.area() + other.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn translated(&self, dx: i64, dy: i64) -> BBox {
        BBox::new(self.left + dx, self.top + dy, self.width, self.height)
    }

    /// Intersection with the image rectangle `[0, w) x [0, h)`.
    pub fn clamped(&self, image_w: usize, image_h: usize) -> BBox {
        let l = self.left.clamp(0, image_w as i64);
        let t = self.top.clamp(0, image_h as i64);
        let r = self.right().clamp(0, image_w as i64);
        let b = self.bottom().clamp(0, image_h as i64);
        BBox::new(l, t, r - l, b - t)
    }
}

/// The shared crop applied to every frame of a window, and its scale to network input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub bbox: BBox,
    pub input_w: usize,
    pub input_h: usize,
    /// `bbox.width / input_w`
    pub alpha_u: f64,
    /// `bbox.height / input_h`
    pub alpha_v: f64,
}

impl CropSpec {
    pub fn new(bbox: BBox, input_w: usize, input_h: usize) -> Result<Self> {
        if bbox.is_degenerate() {
            return Err(Error::domain(format!("degenerate crop box {bbox:?}")));
        }
        if input_w == 0 || input_h == 0 {
            return Err(Error::domain("network input size must be positive"));
        }
        Ok(Self {
            bbox,
            input_w,
            input_h,
            alpha_u: bbox.width as f64 / input_w as f64,
            alpha_v: bbox.height as f64 / input_h as f64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expected = CropSpec::new(self.bbox, self.input_w, self.input_h)?;
        if expected.alpha_u != self.alpha_u || expected.alpha_v != self.alpha_v {
            return Err(Error::domain("crop scale factors inconsistent with box"));
        }
        Ok(())
    }

    /// Original-image pixels per unit of `du`.
    pub fn u_scale(&self) -> f64 {
        self.alpha_u * self.input_w as f64
    }

    pub fn v_scale(&self) -> f64 {
        self.alpha_v * self.input_h as f64
    }

    /// Multiplier turning crop-space `s` into image-space `S`.
    pub fn depth_scale(&self) -> f64 {
        0.5 * (self.alpha_u + self.alpha_v)
    }
}

/// Projects a camera-frame point to `(U, V, Z)`.
pub fn project(k: &CameraIntrinsics, t: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    if !(t.z > 0.0) {
        return Err(Error::domain(format!("cannot project point with depth {}", t.z)));
    }
    Ok((k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy, t.z))
}

/// `Z * K^-1 * (U, V, 1)`.
pub fn backproject(k: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Result<Vector3<f64>> {
    if !(z > 0.0) {
        return Err(Error::domain(format!("cannot backproject at depth {z}")));
    }
    Ok(Vector3::new(z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z))
}

/// Pixel-space motion of the object center between two poses.
pub fn pixel_motion(k: &CameraIntrinsics, prev: &Pose, cur: &Pose) -> Result<PixelMotion> {
    let (u0, v0, z0) = project(k, &prev.translation)?;
    let (u1, v1, z1) = project(k, &cur.translation)?;
    Ok(PixelMotion {
        du_px: u1 - u0,
        dv_px: v1 - v0,
        s: z1 / z0 - 1.0,
    })
}

/// Crop-space translation code for the motion `prev -> cur`.
pub fn encode_translation(
    k: &CameraIntrinsics,
    prev: &Pose,
    cur: &Pose,
    crop: &CropSpec,
) -> Result<TranslationCode> {
    crop.validate()?;
    let m = pixel_motion(k, prev, cur)?;
    Ok(TranslationCode {
        du: m.du_px / crop.u_scale(),
        dv: m.dv_px / crop.v_scale(),
        s: m.s / crop.depth_scale(),
    })
}

/// Result of decoding a translation code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationStep {
    pub delta_t: Vector3<f64>,
    pub center: (f64, f64),
    pub depth: f64,
}

/// Inverse of [`encode_translation`], anchored at the previous center and depth.
pub fn decode_translation(
    k: &CameraIntrinsics,
    center_prev: (f64, f64),
    z_prev: f64,
    code: &TranslationCode,
    crop: &CropSpec,
) -> Result<TranslationStep> {
    crop.validate()?;
    if !(z_prev > 0.0) {
        return Err(Error::domain(format!("previous depth {z_prev} is not positive")));
    }
    let u = center_prev.0 + crop.u_scale() * code.du;
    let v = center_prev.1 + crop.v_scale() * code.dv;
    let s = crop.depth_scale() * code.s;
    let z = z_prev * (1.0 + s);
    if !(z > 0.0) {
        return Err(Error::domain(format!(
            "depth code s = {} sends depth to {z}",
            code.s
        )));
    }
    let t_prev = backproject(k, center_prev.0, center_prev.1, z_prev)?;
    let t_cur = backproject(k, u, v, z)?;
    Ok(TranslationStep {
        delta_t: t_cur - t_prev,
        center: (u, v),
        depth: z,
    })
}

/// Checks `R^T R = I` and `det R = +1` within `tol`.
pub fn validate_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("rotation has non-finite entries"));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if ortho > tol || (det - 1.0).abs() > tol {
        return Err(Error::domain(format!(
            "not a rotation: |R^T R - I| = {ortho:.3e}, det = {det}"
        )));
    }
    Ok(())
}

/// `R_cur * R_prev^T`.
pub fn relative_rotation(r_prev: &Matrix3<f64>, r_cur: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    validate_rotation(r_prev, ROTATION_TOLERANCE)?;
    validate_rotation(r_cur, ROTATION_TOLERANCE)?;
    Ok(r_cur * r_prev.transpose())
}

/// Geodesic angle of a rotation, radians in `[0, pi]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Geodesic distance between two rotations, radians.
pub fn geodesic_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a * b.transpose()))
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues formula. Angles must stay strictly below pi.
pub fn axis_angle_to_matrix(omega: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("axis-angle has non-finite entries"));
    }
    let theta = omega.norm();
    if theta >= PI {
        return Err(Error::domain(format!(
            "axis-angle norm {theta} outside [0, pi)"
        )));
    }
    Ok(rodrigues(omega))
}

/// Rodrigues without the domain check; valid for any finite vector.
pub(crate) fn rodrigues(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(omega);
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse Rodrigues. Fails when the angle is within [`AXIS_ANGLE_PI_MARGIN`] of pi.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    validate_rotation(r, ROTATION_TOLERANCE)?;
    // sin(theta) * axis
    let v = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let c = 0.5 * (r.trace() - 1.0);
    let s = v.norm();
    let theta = s.atan2(c);
    if PI - theta < AXIS_ANGLE_PI_MARGIN {
        return Err(Error::Ambiguity(format!(
            "rotation angle {theta} is within {AXIS_ANGLE_PI_MARGIN} of pi"
        )));
    }
    if theta < 1e-4 {
        let t2 = theta * theta;
        return Ok(v * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0));
    }
    if theta < 0.75 * PI {
        return Ok(v * (theta / s));
    }
    // Large angles: recover the axis from the symmetric part, sign from v.
    let sym = 0.5 * (r + r.transpose()) - Matrix3::identity() * c;
    let one_minus_c = 1.0 - c;
    let diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
    let i = (0..3)
        .max_by(|&a, &b| diag[a].total_cmp(&diag[b]))
        .unwrap_or(0);
    let mut axis = Vector3::new(sym[(0, i)], sym[(1, i)], sym[(2, i)]) / one_minus_c;
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Rotation about the x axis.
pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Which rotation parameterization a [`RotationRep`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationTag {
    AxisAngle,
    Quaternion,
    EulerXyz,
    Sixd,
}

impl RotationTag {
    pub const ALL: [RotationTag; 4] = [
        RotationTag::AxisAngle,
        RotationTag::Quaternion,
        RotationTag::EulerXyz,
        RotationTag::Sixd,
    ];

    pub fn len(&self) -> usize {
        match self {
            RotationTag::AxisAngle | RotationTag::EulerXyz => 3,
            RotationTag::Quaternion => 4,
            RotationTag::Sixd => 6,
        }
    }
}

/// A rotation in one of the supported parameterizations.
///
/// * `Quaternion` is `[w, x, y, z]`, unit norm, canonicalized to `w >= 0` on output.
/// * `EulerXyz` is `[a, b, c]` with `R = Rx(a) * Ry(b) * Rz(c)`.
/// * `Sixd` holds the first two columns of `R`, column-major; decoded by Gram-Schmidt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationRep {
    AxisAngle([f64; 3]),
    Quaternion([f64; 4]),
    EulerXyz([f64; 3]),
    Sixd([f64; 6]),
}

impl RotationRep {
    pub fn tag(&self) -> RotationTag {
        match self {
            RotationRep::AxisAngle(_) => RotationTag::AxisAngle,
            RotationRep::Quaternion(_) => RotationTag::Quaternion,
            RotationRep::EulerXyz(_) => RotationTag::EulerXyz,
            RotationRep::Sixd(_) => RotationTag::Sixd,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            RotationRep::AxisAngle(v) | RotationRep::EulerXyz(v) => v,
            RotationRep::Quaternion(v) => v,
            RotationRep::Sixd(v) => v,
        }
    }

    pub fn from_values(tag: RotationTag, values: &[f64]) -> Result<Self> {
        if values.len() != tag.len() {
            return Err(Error::domain(format!(
                "{tag:?} needs {} values, got {}",
                tag.len(),
                values.len()
            )));
        }
        Ok(match tag {
            RotationTag::AxisAngle => RotationRep::AxisAngle([values[0], values[1], values[2]]),
            RotationTag::Quaternion => {
                RotationRep::Quaternion([values[0], values[1], values[2], values[3]])
            }
            RotationTag::EulerXyz => RotationRep::EulerXyz([values[0], values[1], values[2]]),
            RotationTag::Sixd => {
                let mut v = [0.0; 6];
                v.copy_from_slice(values);
                RotationRep::Sixd(v)
            }
        })
    }

    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("rotation representation has non-finite values"));
        }
        match *self {
            RotationRep::AxisAngle(w) => axis_angle_to_matrix(&Vector3::from(w)),
            RotationRep::Quaternion(q) => quaternion_to_matrix(q),
            RotationRep::EulerXyz(e) => {
                if PI / 2.0 - e[1].abs() < GIMBAL_MARGIN {
                    return Err(Error::Ambiguity(format!(
                        "Euler middle angle {} is within {GIMBAL_MARGIN} of gimbal lock",
                        e[1]
                    )));
                }
                Ok(rot_x(e[0]) * rot_y(e[1]) * rot_z(e[2]))
            }
            RotationRep::Sixd(v) => sixd_to_matrix(v),
        }
    }

    pub fn from_matrix(r: &Matrix3<f64>, tag: RotationTag) -> Result<Self> {
        validate_rotation(r, ROTATION_TOLERANCE)?;
        Ok(match tag {
            RotationTag::AxisAngle => {
                let w = matrix_to_axis_angle(r)?;
                RotationRep::AxisAngle([w.x, w.y, w.z])
            }
            RotationTag::Quaternion => RotationRep::Quaternion(matrix_to_quaternion(r)),
            RotationTag::EulerXyz => RotationRep::EulerXyz(matrix_to_euler_xyz(r)?),
            RotationTag::Sixd => RotationRep::Sixd([
                r[(0, 0)],
                r[(1, 0)],
                r[(2, 0)],
                r[(0, 1)],
                r[(1, 1)],
                r[(2, 1)],
            ]),
        })
    }
}

/// Converts between parameterizations by way of the rotation matrix.
pub fn rotation_convert(rep: &RotationRep, tag_out: RotationTag) -> Result<RotationRep> {
    let r = rep.to_matrix()?;
    RotationRep::from_matrix(&r, tag_out)
}

fn quaternion_to_matrix(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("quaternion norm {n} is not 1")));
    }
    let [w, x, y, z] = q;
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

fn matrix_to_quaternion(r: &Matrix3<f64>) -> [f64; 4] {
    let tr = r.trace();
    let mut q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    for v in &mut q {
        *v *= sign / n;
    }
    q
}

fn matrix_to_euler_xyz(r: &Matrix3<f64>) -> Result<[f64; 3]> {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    if PI / 2.0 - b.abs() < GIMBAL_MARGIN {
        return Err(Error::Ambiguity(format!(
            "rotation is within {GIMBAL_MARGIN} rad of Euler gimbal lock"
        )));
    }
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Ok([a, b, c])
}

fn sixd_to_matrix(v: [f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 < 1e-12 {
        return Err(Error::domain("6D rotation first column is zero"));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < 1e-12 * a2.norm().max(1.0) {
        return Err(Error::domain("6D rotation columns are parallel"));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Smallest box containing all `boxes`, grown by `margin` (fraction of the union size)
/// on every side, clamped to the image, with scale factors for an `input_w x input_h`
/// network input.
pub fn crop_union(
    boxes: &[BBox],
    image_w: usize,
    image_h: usize,
    input_w: usize,
    input_h: usize,
    margin: f64,
) -> Result<CropSpec> {
    if boxes.is_empty() {
        return Err(Error::domain("crop union of an empty box list"));
    }
    if let Some(b) = boxes.iter().find(|b| b.is_degenerate()) {
        return Err(Error::domain(format!("degenerate box {b:?}")));
    }
    if !(margin >= 0.0) {
        return Err(Error::domain(format!("crop margin {margin} must be >= 0")));
    }
    let l = boxes.iter().map(|b| b.left).min().unwrap_or(0);
    let t = boxes.iter().map(|b| b.top).min().unwrap_or(0);
    let r = boxes.iter().map(|b| b.right()).max().unwrap_or(0);
    let btm = boxes.iter().map(|b| b.bottom()).max().unwrap_or(0);
    let mx = (margin * (r - l) as f64).ceil() as i64;
    let my = (margin * (btm - t) as f64).ceil() as i64;
    let grown = BBox::new(l - mx, t - my, r - l + 2 * mx, btm - t + 2 * my);
    let clamped = grown.clamped(image_w, image_h);
    CropSpec::new(clamped, input_w, input_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap()
    }

    #[test]
    fn project_examples() {
        assert_eq!(project(&k(), &Vector3::new(0.0, 0.0, 500.0)).unwrap(), (64.0, 64.0, 500.0));
        assert_eq!(project(&k(), &Vector3::new(10.0, 0.0, 500.0)).unwrap(), (66.0, 64.0, 500.0));
        assert_eq!(
            project(&k(), &Vector3::new(-25.0, 50.0, 1000.0)).unwrap(),
            (61.5, 69.0, 1000.0)
        );
        assert!(matches!(
            project(&k(), &Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn backproject_examples() {
        assert_eq!(backproject(&k(), 64.0, 64.0, 500.0).unwrap(), Vector3::new(0.0, 0.0, 500.0));
        assert_eq!(backproject(&k(), 66.0, 64.0, 500.0).unwrap(), Vector3::new(10.0, 0.0, 500.0));
        assert!(backproject(&k(), 1.0, 1.0, -3.0).is_err());
    }

    #[test]
    fn encode_examples() {
        let crop = CropSpec::new(BBox::new(0, 0, 112, 112), 224, 224).unwrap();
        assert_eq!(crop.alpha_u, 0.5);
        let p0 = Pose::identity_at(Vector3::new(0.0, 0.0, 500.0));
        let code = encode_translation(&k(), &p0, &p0, &crop).unwrap();
        assert_eq!(code, TranslationCode::default());

        let p1 = Pose::identity_at(Vector3::new(10.0, 0.0, 500.0));
        let code = encode_translation(&k(), &p0, &p1, &crop).unwrap();
        assert_abs_diff_eq!(code.du, 2.0 / 112.0, epsilon = 1e-15);
        assert_eq!(code.dv, 0.0);
        assert_eq!(code.s, 0.0);

        let p2 = Pose::identity_at(Vector3::new(0.0, 0.0, 550.0));
        let code = encode_translation(&k(), &p0, &p2, &crop).unwrap();
        assert_abs_diff_eq!(code.s, 0.2, epsilon = 1e-12);
        assert_eq!((code.du, code.dv), (0.0, 0.0));
    }

    #[test]
    fn decode_examples() {
        let crop = CropSpec::new(BBox::new(0, 0, 112, 112), 224, 224).unwrap();
        let step =
            decode_translation(&k(), (64.0, 64.0), 500.0, &TranslationCode::default(), &crop)
                .unwrap();
        assert_eq!(step.delta_t, Vector3::zeros());
        assert_eq!(step.center, (64.0, 64.0));
        assert_eq!(step.depth, 500.0);

        let code = TranslationCode {
            du: 2.0 / 112.0,
            dv: 0.0,
            s: 0.0,
        };
        let step = decode_translation(&k(), (64.0, 64.0), 500.0, &code, &crop).unwrap();
        assert_abs_diff_eq!(step.delta_t, Vector3::new(10.0, 0.0, 0.0), epsilon = 1e-12);

        // s = -2 / (alpha_u + alpha_v) puts the object on the camera plane
        let bad = TranslationCode {
            du: 0.0,
            dv: 0.0,
            s: -2.0,
        };
        assert!(decode_translation(&k(), (64.0, 64.0), 500.0, &bad, &crop).is_err());
    }

    #[test]
    fn degenerate_crop_rejected() {
        assert!(CropSpec::new(BBox::new(0, 0, 0, 10), 32, 32).is_err());
        let bogus = CropSpec {
            bbox: BBox::new(0, 0, 0, 10),
            input_w: 32,
            input_h: 32,
            alpha_u: 0.0,
            alpha_v: 10.0 / 32.0,
        };
        let p = Pose::identity_at(Vector3::new(0.0, 0.0, 500.0));
        assert!(encode_translation(&k(), &p, &p, &bogus).is_err());
    }

    #[test]
    fn relative_rotation_examples() {
        let rz = rot_z(30f64.to_radians());
        assert_abs_diff_eq!(
            relative_rotation(&Matrix3::identity(), &rz).unwrap(),
            rz,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            relative_rotation(&rz, &rz).unwrap(),
            Matrix3::identity(),
            epsilon = 1e-15
        );
        let mut bad = rz;
        bad[(0, 0)] += 1e-3;
        assert!(relative_rotation(&bad, &rz).is_err());
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(axis_angle_to_matrix(&Vector3::zeros()).unwrap(), Matrix3::identity());
        let r = axis_angle_to_matrix(&Vector3::new(0.0, 0.0, PI / 2.0)).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(r, expected, epsilon = 1e-15);
        let w = matrix_to_axis_angle(&expected).unwrap();
        assert_abs_diff_eq!(w, Vector3::new(0.0, 0.0, PI / 2.0), epsilon = 1e-15);
        assert_eq!(matrix_to_axis_angle(&Matrix3::identity()).unwrap(), Vector3::zeros());
        assert!(axis_angle_to_matrix(&Vector3::new(PI, 0.0, 0.0)).is_err());
        assert!(matches!(
            matrix_to_axis_angle(&rot_x(PI - 1e-8)),
            Err(Error::Ambiguity(_))
        ));
    }

    #[test]
    fn geodesic_angle_of_rz() {
        for deg in [5.0f64, 20.0, 44.0] {
            let r = rot_z(deg.to_radians());
            assert_abs_diff_eq!(matrix_to_axis_angle(&r).unwrap().norm(), deg.to_radians(), epsilon = 1e-12);
            assert_abs_diff_eq!(rotation_angle(&r), deg.to_radians(), epsilon = 1e-12);
        }
    }

    #[test]
    fn representation_examples() {
        let q = rotation_convert(&RotationRep::AxisAngle([0.0; 3]), RotationTag::Quaternion).unwrap();
        assert_eq!(q, RotationRep::Quaternion([1.0, 0.0, 0.0, 0.0]));

        let rz = rot_z(PI / 2.0);
        let six = RotationRep::Sixd([
            rz[(0, 0)],
            rz[(1, 0)],
            rz[(2, 0)],
            rz[(0, 1)],
            rz[(1, 1)],
            rz[(2, 1)],
        ]);
        assert_abs_diff_eq!(six.to_matrix().unwrap(), rz, epsilon = 1e-15);

        // Non-orthogonal 6D input is orthogonalized.
        let skewed = RotationRep::Sixd([2.0, 0.0, 0.0, 1.0, 3.0, 0.0]);
        assert_abs_diff_eq!(skewed.to_matrix().unwrap(), Matrix3::identity(), epsilon = 1e-15);

        assert!(RotationRep::EulerXyz([0.1, PI / 2.0 - 1e-4, 0.2]).to_matrix().is_err());
        assert!(RotationRep::Quaternion([1.0, 1.0, 0.0, 0.0]).to_matrix().is_err());
        assert!(RotationRep::from_matrix(&rot_y(PI / 2.0), RotationTag::EulerXyz).is_err());
    }

    #[test]
    fn quaternion_sign_is_canonical() {
        let r = rot_x(3.0);
        match RotationRep::from_matrix(&r, RotationTag::Quaternion).unwrap() {
            RotationRep::Quaternion(q) => assert!(q[0] >= 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn crop_union_examples() {
        let b = BBox::new(3, 4, 10, 12);
        assert_eq!(crop_union(&[b], 64, 64, 32, 32, 0.0).unwrap().bbox, b);
        let c = crop_union(
            &[BBox::new(0, 0, 10, 10), BBox::new(20, 20, 10, 10)],
            64,
            64,
            32,
            32,
            0.0,
        )
        .unwrap();
        assert_eq!(c.bbox, BBox::new(0, 0, 30, 30));
        assert_eq!(c.alpha_u, 30.0 / 32.0);
        assert!(crop_union(&[], 64, 64, 32, 32, 0.0).is_err());

        // margin grows each side, then the image clamps it
        let c = crop_union(&[BBox::new(10, 10, 10, 20)], 64, 64, 32, 32, 0.1).unwrap();
        assert_eq!(c.bbox, BBox::new(9, 8, 12, 24));
        let c = crop_union(&[BBox::new(0, 0, 10, 10)], 64, 64, 32, 32, 0.5).unwrap();
        assert_eq!(c.bbox, BBox::new(0, 0, 15, 15));
    }
}
