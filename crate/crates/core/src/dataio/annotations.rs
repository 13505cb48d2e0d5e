//! Hand annotation records, one JSON object per line.
//!
//! The first line may be a header `{"format": "handmesh-annotations",
//! "format_version": 1}`; files without it are read as version 1. Each
//! record looks like
//!
//! ```text
//! {"image_id": "img_0001", "hand_side": "right",
//!  "keypoints": [{"u": 12.5, "v": 40.0, "exists": true, "occluded": false}, ... 21 entries],
//!  "source": "newdays", "sequence_id": "seq7", "crop_box": [x0, y0, w, h],
//!  "theta": [...], "beta": [...], "joints3d": [[x, y, z], ...], "vertices": [...],
//!  "camera_translation": [tx, ty, tz]}
//! ```
//!
//! Everything after `keypoints` is optional. The 3D fields make the same
//! schema serve as a predictions file. Unknown fields are kept and written
//! back unchanged.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{read_to_string, write_atomic, DataError};
use crate::camera::CropBox;
use crate::keypoints::{KeypointLabel, NUM_KEYPOINTS};
use crate::linalg::Vec3;
use crate::losses::GroundTruthSample;
use crate::scalar::Real;

pub const ANNOTATION_FORMAT_VERSION: u64 = 1;
const ANNOTATION_FORMAT: &str = "handmesh-annotations";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointAnnotation {
    pub image_id: String,
    pub hand_side: HandSide,
    /// Pixel coordinates in the full image, annotation keypoint order.
    pub keypoints: Vec<KeypointLabel<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<String>,
    /// `[x0, y0, width, height]` of the hand crop in the full image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_box: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    /// Meters, model frame, annotation keypoint order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_translation: Option<[f64; 3]>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl KeypointAnnotation {
    /// A record with the given keypoints and nothing else.
    pub fn new(image_id: impl Into<String>, hand_side: HandSide, keypoints: Vec<KeypointLabel<f64>>) -> Self {
        KeypointAnnotation {
            image_id: image_id.into(),
            hand_side,
            keypoints,
            source: None,
            sequence_id: None,
            crop_box: None,
            theta: None,
            beta: None,
            joints3d: None,
            vertices: None,
            camera_translation: None,
            extra: Map::new(),
        }
    }

    /// Pairing key used across files.
    pub fn key(&self) -> (&str, HandSide) {
        (&self.image_id, self.hand_side)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.keypoints.len() != NUM_KEYPOINTS {
            return Err(format!(
                "expected {NUM_KEYPOINTS} keypoints, got {}",
                self.keypoints.len()
            ));
        }
        for (i, k) in self.keypoints.iter().enumerate() {
            if k.exists && !(k.u.is_finite() && k.v.is_finite()) {
                return Err(format!("keypoint {i} exists but has non-finite coordinates"));
            }
        }
        if let Some(b) = &self.crop_box {
            if !b.iter().all(|x| x.is_finite()) || b[2] <= 0.0 || b[3] <= 0.0 {
                return Err(format!("crop_box {b:?} is not a positive finite box"));
            }
        }
        if let Some(t) = &self.theta {
            if t.is_empty() || t.len() % 3 != 0 {
                return Err(format!("theta length {} is not a positive multiple of 3", t.len()));
            }
        }
        if let Some(x) = &self.joints3d {
            if x.len() != NUM_KEYPOINTS {
                return Err(format!("expected {NUM_KEYPOINTS} joints3d entries, got {}", x.len()));
            }
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let finite3 = |xs: &[[f64; 3]]| xs.iter().all(|p| finite(p));
        if !self.theta.as_deref().map_or(true, finite)
            || !self.beta.as_deref().map_or(true, finite)
            || !self.joints3d.as_deref().map_or(true, finite3)
            || !self.vertices.as_deref().map_or(true, finite3)
            || !self.camera_translation.as_ref().map_or(true, |t| finite(t))
        {
            return Err("non-finite 3D field".into());
        }
        Ok(())
    }

    /// Crop placement for a `crop_size` square crop. Without a recorded box
    /// a square box 1.2 times the extent of the existing keypoints is used.
    pub fn crop_for_size(&self, crop_size: f64) -> Option<CropBox<f64>> {
        let b = match self.crop_box {
            Some(b) => b,
            None => {
                let pts: Vec<_> = self.keypoints.iter().filter(|k| k.exists).collect();
                if pts.is_empty() {
                    return None;
                }
                let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for k in pts {
                    x0 = x0.min(k.u);
                    y0 = y0.min(k.v);
                    x1 = x1.max(k.u);
                    y1 = y1.max(k.v);
                }
                let side = 1.2 * (x1 - x0).max(y1 - y0).max(1.0);
                let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                [cx - side / 2.0, cy - side / 2.0, side, side]
            }
        };
        CropBox::from_box(b[0], b[1], b[2], b[3], crop_size, crop_size).ok()
    }

    /// Supervision in the frame of `crop` (full-image pixels when `None`).
    /// Missing keypoints get weight 0.
    pub fn to_ground_truth<T: Real>(&self, crop: Option<&CropBox<f64>>) -> GroundTruthSample<T> {
        let keypoints2d = self
            .keypoints
            .iter()
            .map(|k| match crop {
                Some(c) => [T::lit((k.u - c.offset_x) / c.scale_x), T::lit((k.v - c.offset_y) / c.scale_y)],
                None => [T::lit(k.u), T::lit(k.v)],
            })
            .collect();
        let weights = self
            .keypoints
            .iter()
            .map(|k| if k.exists { T::one() } else { T::zero() })
            .collect();
        let lit = |xs: &Vec<f64>| xs.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
        GroundTruthSample {
            theta: self.theta.as_ref().map(lit),
            beta: self.beta.as_ref().map(lit),
            joints3d: self
                .joints3d
                .as_ref()
                .map(|x| x.iter().map(|p| Vec3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]))).collect()),
            keypoints2d: Some(keypoints2d),
            keypoint_weights: Some(weights),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// The first malformed line aborts the load.
    #[default]
    Strict,
    /// Malformed lines are skipped and reported.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedAnnotations {
    pub records: Vec<KeypointAnnotation>,
    /// `(line, message)` of every skipped line (lenient mode only).
    pub skipped: Vec<(usize, String)>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    format_version: u64,
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<KeypointAnnotation>, DataError> {
    let syntax = |message: String| DataError::Syntax { line: lineno, message };
    let value: Value = serde_json::from_str(line).map_err(|e| syntax(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| syntax("record is not a JSON object".into()))?;
    if obj.contains_key("format") && !obj.contains_key("image_id") {
        let h: Header = serde_json::from_value(value).map_err(|e| syntax(format!("bad header: {e}")))?;
        if h.format != ANNOTATION_FORMAT {
            return Err(syntax(format!("format is '{}', expected '{ANNOTATION_FORMAT}'", h.format)));
        }
        if h.format_version != ANNOTATION_FORMAT_VERSION {
            return Err(DataError::UnsupportedVersion {
                found: h.format_version,
                supported: ANNOTATION_FORMAT_VERSION,
            });
        }
        return Ok(None);
    }
    // Parse from text rather than the Value so numbers keep every bit.
    let rec: KeypointAnnotation = serde_json::from_str(line).map_err(|e| syntax(e.to_string()))?;
    rec.validate().map_err(syntax)?;
    Ok(Some(rec))
}

pub fn parse_annotations(text: &str, mode: ParseMode) -> Result<LoadedAnnotations, DataError> {
    let mut out = LoadedAnnotations::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, lineno) {
            Ok(Some(r)) => out.records.push(r),
            Ok(None) => {}
            Err(e @ DataError::UnsupportedVersion { .. }) => return Err(e),
            Err(e) if mode == ParseMode::Strict => return Err(e),
            Err(DataError::Syntax { message, .. }) => out.skipped.push((lineno, message)),
            Err(e) => out.skipped.push((lineno, e.to_string())),
        }
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>, mode: ParseMode) -> Result<LoadedAnnotations, DataError> {
    parse_annotations(&read_to_string(path.as_ref())?, mode)
}

pub fn write_annotations(mut w: impl Write, records: &[KeypointAnnotation]) -> std::io::Result<()> {
    writeln!(
        w,
        "{{\"format\":\"{ANNOTATION_FORMAT}\",\"format_version\":{ANNOTATION_FORMAT_VERSION}}}"
    )?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn annotations_to_string(records: &[KeypointAnnotation]) -> String {
    let mut buf = Vec::new();
    write_annotations(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn save_annotations(path: impl AsRef<Path>, records: &[KeypointAnnotation]) -> Result<(), DataError> {
    write_atomic(path.as_ref(), annotations_to_string(records).as_bytes())
}
