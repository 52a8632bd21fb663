//! On-disk sequence format and JSON helpers.
//!
//! ```text
//! <seq>/frames/000000.png   8-bit RGB
//! <seq>/depth/000000.png    16-bit gray, mm (optional)
//! <seq>/masks/000000.png    8-bit gray, 0 or 255 (optional)
//! <seq>/poses.json          [PoseRecord]
//! <seq>/meta.json           SequenceMeta
//! <seq>/points.json         model points, mm (optional)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{validate_rotation, BBox, CameraIntrinsics, CropSpec, MotionCode, Pose, ROTATION_TOLERANCE};
use crate::raster::RgbImage;
use crate::segmask::Mask;
use crate::synth::{Protocol, SyntheticSequence};
use crate::tracker::Trajectory;

pub const FRAMES_DIR: &str = "frames";
pub const DEPTH_DIR: &str = "depth";
pub const MASKS_DIR: &str = "masks";
pub const POSES_FILE: &str = "poses.json";
pub const META_FILE: &str = "meta.json";
pub const POINTS_FILE: &str = "points.json";

/// One pose as stored in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    /// Row-major rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    /// Translation, mm.
    #[serde(rename = "T")]
    pub t: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(frame: usize, pose: &Pose) -> Self {
        let m = &pose.rotation;
        Self {
            frame,
            r: [
                m[(0, 0)], m[(0, 1)], m[(0, 2)],
                m[(1, 0)], m[(1, 1)], m[(1, 2)],
                m[(2, 0)], m[(2, 1)], m[(2, 2)],
            ],
            t: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let r = Matrix3::from_row_slice(&self.r);
        validate_rotation(&r, ROTATION_TOLERANCE).map_err(|e| e.at_frame(self.frame))?;
        Ok(Pose::new(r, Vector3::from(self.t)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub length: usize,
    #[serde(default)]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// A sequence as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOnDisk {
    pub meta: SequenceMeta,
    pub frames: Vec<RgbImage>,
    pub depths: Option<Vec<Vec<f32>>>,
    pub masks: Option<Vec<Mask>>,
    pub poses: Vec<Pose>,
    pub points: Option<Vec<[f64; 3]>>,
}

/// One tracked frame as written by the `track` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    #[serde(flatten)]
    pub pose: PoseRecord,
    pub center: [f64; 2],
    pub depth: f64,
    pub bbox: BBox,
    #[serde(default)]
    pub code: Option<MotionCode>,
    #[serde(default)]
    pub crop: Option<CropSpec>,
    #[serde(default)]
    pub reinitialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Complete,
    Lost,
}

/// Trajectory file: the frames tracked so far plus how tracking ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub status: TrajectoryStatus,
    #[serde(default)]
    pub error: Option<String>,
    /// Frames in the source sequence.
    pub sequence_length: usize,
    pub predictor: String,
    pub z0: f64,
    #[serde(rename = "R0")]
    pub r0: [f64; 9],
    #[serde(default)]
    pub reinit_every: Option<usize>,
    pub frames: Vec<TrajectoryRecord>,
}

impl TrajectoryFile {
    pub fn from_trajectory(traj: &Trajectory) -> Vec<TrajectoryRecord> {
        traj.frames
            .iter()
            .enumerate()
            .map(|(i, f)| TrajectoryRecord {
                pose: PoseRecord::from_pose(i, &f.pose),
                center: [f.center.0, f.center.1],
                depth: f.depth,
                bbox: f.bbox,
                code: f.code,
                crop: f.crop,
                reinitialized: f.reinitialized,
            })
            .collect()
    }

    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.frames.iter().map(|f| f.pose.to_pose()).collect()
    }
}

pub fn frame_name(t: usize) -> String {
    format!("{t:06}.png")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pretty JSON written to a sibling temp file, then renamed into place.
pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_bytes_atomic(path, text.as_bytes())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = tmp_sibling(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
            .ok_or_else(|| Error::invalid(path.display().to_string(), "image buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_rgb8(w as usize, h as usize, img.as_raw()))
}

/// Depth rounded to whole millimeters.
pub fn write_depth_png(path: &Path, depth: &[f32], width: usize, height: usize) -> Result<()> {
    let data: Vec<u16> = depth.iter().map(|d| d.round().clamp(0.0, 65535.0) as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width as u32, height as u32, data)
        .ok_or_else(|| Error::invalid(path.display().to_string(), "depth buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn read_depth_png(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma16();
    let (w, h) = img.dimensions();
    Ok((img.as_raw().iter().map(|&v| v as f32).collect(), w as usize, h as usize))
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let data: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(mask.width as u32, mask.height as u32, data)
        .ok_or_else(|| Error::invalid(path.display().to_string(), "mask buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn read_mask_png(path: &Path, frame_index: usize) -> Result<Mask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask {
        width: w as usize,
        height: h as usize,
        data: img.as_raw().iter().map(|&v| v > 127).collect(),
        frame_index,
    })
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let records: Vec<PoseRecord> = poses.iter().enumerate().map(|(i, p)| PoseRecord::from_pose(i, p)).collect();
    write_json_atomic(path, &records)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let records: Vec<PoseRecord> = read_json(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.frame != i {
                return Err(Error::invalid(
                    path.display().to_string(),
                    format!("record {i} is labelled frame {}", r.frame),
                ));
            }
            r.to_pose()
        })
        .collect()
}

/// Writes a rendered sequence into `dir`, replacing any previous contents. The sequence
/// is assembled in a temporary sibling directory and renamed into place.
pub fn write_sequence(dir: &Path, seq: &SyntheticSequence) -> Result<()> {
    let tmp = tmp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    for sub in [FRAMES_DIR, DEPTH_DIR, MASKS_DIR] {
        let p = tmp.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let spec = &seq.spec;
    for (t, f) in seq.frames.iter().enumerate() {
        write_rgb_png(&tmp.join(FRAMES_DIR).join(frame_name(t)), &f.image)?;
        write_depth_png(&tmp.join(DEPTH_DIR).join(frame_name(t)), &f.depth, spec.width, spec.height)?;
        write_mask_png(&tmp.join(MASKS_DIR).join(frame_name(t)), &f.mask)?;
    }
    write_poses(&tmp.join(POSES_FILE), &seq.poses())?;
    let meta = SequenceMeta {
        intrinsics: spec.intrinsics,
        width: spec.width,
        height: spec.height,
        length: seq.frames.len(),
        protocol: Some(spec.protocol),
        seed: Some(spec.seed),
    };
    write_json_atomic(&tmp.join(META_FILE), &meta)?;
    write_json_atomic(&tmp.join(POINTS_FILE), &seq.object.points)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

pub fn read_sequence(dir: &Path) -> Result<SequenceOnDisk> {
    let meta: SequenceMeta = read_json(&dir.join(META_FILE))?;
    meta.intrinsics.validate()?;
    let poses = read_poses(&dir.join(POSES_FILE))?;
    if poses.len() != meta.length {
        return Err(Error::invalid(
            dir.join(POSES_FILE).display().to_string(),
            format!("{} poses for {} frames", poses.len(), meta.length),
        ));
    }
    let mut frames = Vec::with_capacity(meta.length);
    for t in 0..meta.length {
        let path = dir.join(FRAMES_DIR).join(frame_name(t));
        let img = read_rgb_png(&path)?;
        if img.width != meta.width || img.height != meta.height {
            return Err(Error::invalid(path.display().to_string(), "frame size differs from meta.json"));
        }
        frames.push(img);
    }
    let depths = if dir.join(DEPTH_DIR).is_dir() {
        let mut out = Vec::with_capacity(meta.length);
        for t in 0..meta.length {
            out.push(read_depth_png(&dir.join(DEPTH_DIR).join(frame_name(t)))?.0);
        }
        Some(out)
    } else {
        None
    };
    let masks = if dir.join(MASKS_DIR).is_dir() {
        let mut out = Vec::with_capacity(meta.length);
        for t in 0..meta.length {
            out.push(read_mask_png(&dir.join(MASKS_DIR).join(frame_name(t)), t)?);
        }
        Some(out)
    } else {
        None
    };
    let points_path = dir.join(POINTS_FILE);
    let points = if points_path.is_file() {
        Some(read_json(&points_path)?)
    } else {
        None
    };
    Ok(SequenceOnDisk {
        meta,
        frames,
        depths,
        masks,
        poses,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sequence, uniform_rotation, SequenceSpec, SynthConfig};
    use rand::SeedableRng;

    #[test]
    fn pose_record_round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for i in 0..200 {
            let p = Pose::new(uniform_rotation(&mut rng), Vector3::new(0.1 * i as f64, -3.7, 512.25 + i as f64 / 7.0));
            let text = serde_json::to_string(&PoseRecord::from_pose(i, &p)).unwrap();
            let back: PoseRecord = serde_json::from_str(&text).unwrap();
            assert_eq!(back.to_pose().unwrap(), p);
        }
    }

    #[test]
    fn non_orthonormal_record_rejected() {
        let rec = PoseRecord {
            frame: 4,
            r: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.01],
            t: [0.0; 3],
        };
        assert!(rec.to_pose().is_err());
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SequenceSpec {
            length: 3,
            width: 48,
            height: 40,
            ..SequenceSpec::new(Protocol::ShapenetVideo, 5)
        };
        let cfg = SynthConfig {
            keep_in_view: false,
            ..SynthConfig::default()
        };
        let seq = generate_sequence(&spec, &cfg).unwrap();
        let path = dir.path().join("s");
        write_sequence(&path, &seq).unwrap();
        let back = read_sequence(&path).unwrap();
        assert_eq!(back.poses, seq.poses());
        assert_eq!(back.masks.unwrap(), seq.masks());
        assert_eq!(back.points.unwrap(), seq.object.points);
        for (a, b) in back.frames.iter().zip(&seq.frames) {
            assert_eq!(a.to_rgb8(), b.image.to_rgb8());
        }
        assert_eq!(back.meta.length, 3);
    }
}
