//! Pose-error metrics: (k°, k cm) correctness, ADD, ADD-S, Proj2D, AUC and
//! per-segment drift against the mean ground-truth motion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, matrix_to_axis_angle, project, CameraIntrinsics, Pose};

pub fn rotation_error_deg(pred: &Pose, gt: &Pose) -> f64 {
    geodesic_distance(&pred.rotation, &gt.rotation).to_degrees()
}

pub fn translation_error_mm(pred: &Pose, gt: &Pose) -> f64 {
    (pred.translation - gt.translation).norm()
}

pub fn pose_correct_k_deg_k_cm(pred: &Pose, gt: &Pose, k_deg: f64, k_cm: f64) -> bool {
    rotation_error_deg(pred, gt) <= k_deg && translation_error_mm(pred, gt) <= 10.0 * k_cm
}

fn non_empty(points: &[Vector3<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::domain("empty point set"));
    }
    Ok(())
}

/// Mean distance between corresponding transformed points.
pub fn add(pred: &Pose, gt: &Pose, points: &[Vector3<f64>]) -> Result<f64> {
    non_empty(points)?;
    let sum: f64 = points
        .iter()
        .map(|x| (pred.transform_point(x) - gt.transform_point(x)).norm())
        .sum();
    Ok(sum / points.len() as f64)
}

/// Mean distance from each ground-truth point to the closest predicted point.
pub fn add_s(pred: &Pose, gt: &Pose, points: &[Vector3<f64>]) -> Result<f64> {
    non_empty(points)?;
    let p: Vec<Vector3<f64>> = points.iter().map(|x| pred.transform_point(x)).collect();
    let sum: f64 = points
        .iter()
        .map(|x| {
            let g = gt.transform_point(x);
            p.iter().map(|q| (q - g).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
        })
        .sum();
    Ok(sum / points.len() as f64)
}

/// Mean pixel distance between projections of the transformed points.
pub fn proj2d(pred: &Pose, gt: &Pose, points: &[Vector3<f64>], k: &CameraIntrinsics) -> Result<f64> {
    non_empty(points)?;
    let mut sum = 0.0;
    for x in points {
        let (ua, va, _) = project(k, &pred.transform_point(x))?;
        let (ub, vb, _) = project(k, &gt.transform_point(x))?;
        sum += (ua - ub).hypot(va - vb);
    }
    Ok(sum / points.len() as f64)
}

/// Largest pairwise distance.
pub fn diameter(points: &[Vector3<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max((a - b).norm_squared());
        }
    }
    d.sqrt()
}

/// Normalized area under the accuracy-vs-threshold curve on `[0, threshold_max]`.
///
/// Accuracy is a step function of the threshold, so the integral is evaluated exactly:
/// each value contributes `max(0, threshold_max - v) / threshold_max`.
pub fn auc(values: &[f64], threshold_max: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("auc of an empty set"));
    }
    if !(threshold_max > 0.0) {
        return Err(Error::invalid("threshold_max", "must be > 0"));
    }
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("auc values must be non-negative"));
    }
    let sum: f64 = values.iter().map(|v| (threshold_max - v).max(0.0) / threshold_max).sum();
    Ok(sum / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentError {
    pub start: usize,
    /// Last frame of the segment (inclusive).
    pub end: usize,
    pub rotation_deg: f64,
    pub translation_mm: f64,
    /// Ground-truth motion over the segment.
    pub motion_rotation_deg: f64,
    pub motion_translation_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment_len: usize,
    pub segments: Vec<SegmentError>,
    pub mean_rotation_deg: f64,
    pub mean_translation_mm: f64,
    /// Mean ground-truth motion per segment.
    pub baseline_rotation_deg: f64,
    pub baseline_translation_mm: f64,
}

/// Errors at the end of each segment `[s, min(s + L, n))`, measured relative to the segment start.
///
/// With a re-initialization at every segment start this equals the absolute error at the
/// segment end; otherwise it removes the drift accumulated before the segment.
pub fn segment_errors(pred: &[Pose], gt: &[Pose], segment_len: usize) -> Result<SegmentReport> {
    if pred.len() != gt.len() {
        return Err(Error::domain(format!(
            "trajectory has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if segment_len < 2 {
        return Err(Error::invalid("segment_len", "must be >= 2"));
    }
    let mut segments = Vec::new();
    let mut s = 0;
    while s + 1 < gt.len() {
        let e = (s + segment_len).min(gt.len()) - 1;
        let dr_pred = pred[e].rotation * pred[s].rotation.transpose();
        let dr_gt = gt[e].rotation * gt[s].rotation.transpose();
        let dt_pred = pred[e].translation - pred[s].translation;
        let dt_gt = gt[e].translation - gt[s].translation;
        segments.push(SegmentError {
            start: s,
            end: e,
            rotation_deg: geodesic_distance(&dr_pred, &dr_gt).to_degrees(),
            translation_mm: (dt_pred - dt_gt).norm(),
            motion_rotation_deg: geodesic_distance(&gt[e].rotation, &gt[s].rotation).to_degrees(),
            motion_translation_mm: dt_gt.norm(),
        });
        s += segment_len;
    }
    let mean = |f: fn(&SegmentError) -> f64| {
        if segments.is_empty() {
            0.0
        } else {
            segments.iter().map(f).sum::<f64>() / segments.len() as f64
        }
    };
    Ok(SegmentReport {
        segment_len,
        mean_rotation_deg: mean(|x| x.rotation_deg),
        mean_translation_mm: mean(|x| x.translation_mm),
        baseline_rotation_deg: mean(|x| x.motion_rotation_deg),
        baseline_translation_mm: mean(|x| x.motion_translation_mm),
        segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub k_deg: f64,
    pub k_cm: f64,
    /// ADD threshold as a fraction of the object diameter.
    pub add_fraction: f64,
    pub proj2d_px: f64,
    pub auc_max_mm: f64,
    pub segment_len: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k_deg: 5.0,
            k_cm: 5.0,
            add_fraction: 0.1,
            proj2d_px: 5.0,
            auc_max_mm: 100.0,
            segment_len: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub rotation_deg: f64,
    pub translation_mm: f64,
    /// Absolute axis-angle components of `R_pred R_gt^T`, degrees.
    pub rotation_axes_deg: [f64; 3],
    pub translation_axes_mm: [f64; 3],
    pub add: f64,
    pub add_s: f64,
    pub proj2d: f64,
    pub correct_k_deg_k_cm: bool,
    pub correct_add: bool,
    pub correct_add_s: bool,
    pub correct_proj2d: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub frames: usize,
    pub diameter_mm: f64,
    pub mean_rotation_deg: f64,
    pub mean_translation_mm: f64,
    pub mean_add: f64,
    pub mean_add_s: f64,
    pub mean_proj2d: f64,
    pub acc_k_deg_k_cm: f64,
    pub acc_add: f64,
    pub acc_add_s: f64,
    pub acc_proj2d: f64,
    pub auc_add: f64,
    pub auc_add_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default)]
    pub label: Option<String>,
    pub config: MetricsConfig,
    pub frames: Vec<FrameMetrics>,
    pub aggregate: AggregateMetrics,
    pub segments: SegmentReport,
}

fn rotation_axes_deg(pred: &Pose, gt: &Pose) -> [f64; 3] {
    let d = pred.rotation * gt.rotation.transpose();
    match matrix_to_axis_angle(&d) {
        Ok(w) => [w.x.abs(), w.y.abs(), w.z.abs()].map(f64::to_degrees),
        // near pi the axis sign is ambiguous but the magnitudes are not
        Err(_) => {
            let a = geodesic_distance(&pred.rotation, &gt.rotation);
            let axis = [0, 1, 2].map(|i| ((d[(i, i)] + 1.0) / 2.0).max(0.0).sqrt());
            axis.map(|c| (c * a).to_degrees())
        }
    }
}

/// Every metric family for one trajectory.
pub fn evaluate(
    pred: &[Pose],
    gt: &[Pose],
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
    cfg: &MetricsConfig,
) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::domain(format!(
            "trajectory has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("empty trajectory"));
    }
    non_empty(points)?;
    let d = diameter(points);
    let mut frames = Vec::with_capacity(pred.len());
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        let a = add(p, g, points)?;
        let s = add_s(p, g, points)?;
        let px = proj2d(p, g, points, k).map_err(|e| e.at_frame(i))?;
        let dt = p.translation - g.translation;
        frames.push(FrameMetrics {
            frame: i,
            rotation_deg: rotation_error_deg(p, g),
            translation_mm: dt.norm(),
            rotation_axes_deg: rotation_axes_deg(p, g),
            translation_axes_mm: [dt.x.abs(), dt.y.abs(), dt.z.abs()],
            add: a,
            add_s: s,
            proj2d: px,
            correct_k_deg_k_cm: pose_correct_k_deg_k_cm(p, g, cfg.k_deg, cfg.k_cm),
            correct_add: a <= cfg.add_fraction * d,
            correct_add_s: s <= cfg.add_fraction * d,
            correct_proj2d: px <= cfg.proj2d_px,
        });
    }
    let n = frames.len() as f64;
    let mean = |f: &dyn Fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
    let frac = |f: &dyn Fn(&FrameMetrics) -> bool| frames.iter().filter(|x| f(x)).count() as f64 / n;
    let adds: Vec<f64> = frames.iter().map(|f| f.add).collect();
    let add_ss: Vec<f64> = frames.iter().map(|f| f.add_s).collect();
    let aggregate = AggregateMetrics {
        frames: frames.len(),
        diameter_mm: d,
        mean_rotation_deg: mean(&|f| f.rotation_deg),
        mean_translation_mm: mean(&|f| f.translation_mm),
        mean_add: mean(&|f| f.add),
        mean_add_s: mean(&|f| f.add_s),
        mean_proj2d: mean(&|f| f.proj2d),
        acc_k_deg_k_cm: frac(&|f| f.correct_k_deg_k_cm),
        acc_add: frac(&|f| f.correct_add),
        acc_add_s: frac(&|f| f.correct_add_s),
        acc_proj2d: frac(&|f| f.correct_proj2d),
        auc_add: auc(&adds, cfg.auc_max_mm)?,
        auc_add_s: auc(&add_ss, cfg.auc_max_mm)?,
    };
    Ok(MetricReport {
        label: None,
        config: *cfg,
        segments: segment_errors(pred, gt, cfg.segment_len)?,
        frames,
        aggregate,
    })
}

impl MetricReport {
    /// Plain-text summary with one row of accuracies and one of segment errors.
    pub fn table(&self) -> String {
        let a = &self.aggregate;
        let c = &self.config;
        let s = &self.segments;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14}{:>12}{:>12}{:>12}{:>12}{:>10}{:>10}\n",
            "",
            format!("({}°,{}cm)", c.k_deg, c.k_cm),
            format!("ADD({}d)", c.add_fraction),
            format!("ADD-S({}d)", c.add_fraction),
            format!("Proj2D({}px)", c.proj2d_px),
            "AUC ADD",
            "AUC ADD-S"
        ));
        out.push_str(&format!(
            "{:<14}{:>12.1}{:>12.1}{:>12.1}{:>12.1}{:>10.3}{:>10.3}\n",
            self.label.as_deref().unwrap_or("trajectory"),
            100.0 * a.acc_k_deg_k_cm,
            100.0 * a.acc_add,
            100.0 * a.acc_add_s,
            100.0 * a.acc_proj2d,
            a.auc_add,
            a.auc_add_s
        ));
        out.push_str(&format!(
            "\n{:<14}{:>16}{:>16}\n",
            format!("{}-frame segs", s.segment_len),
            "rotation (deg)",
            "translation (mm)"
        ));
        out.push_str(&format!(
            "{:<14}{:>16.2}{:>16.2}\n",
            self.label.as_deref().unwrap_or("trajectory"),
            s.mean_rotation_deg,
            s.mean_translation_mm
        ));
        out.push_str(&format!(
            "{:<14}{:>16.2}{:>16.2}\n",
            "mean motion", s.baseline_rotation_deg, s.baseline_translation_mm
        ));
        out
    }
}
