//! Asset file: a JSON object with a dimension header and flat arrays.
//!
//! ```text
//! {
//!   "format": "handmesh-asset",
//!   "format_version": 1,
//!   "dims": {"vertices": V, "joints": J, "shape": B, "fingertips": F, "faces": NF},
//!   "parents": [-1, 0, ...],                 // J entries, -1 for the root
//!   "template_vertices": [[x, y, z], ...],   // V
//!   "shape_dirs": [...],                     // V*3*B, index (v*3+c)*B+b
//!   "pose_dirs": [...],                      // V*3*9(J-1)
//!   "joint_regressor": [...],                // J*V
//!   "skinning_weights": [...],               // V*J
//!   "fingertip_vertex_ids": [...],           // F
//!   "faces": [[a, b, c], ...],               // NF
//!   "keypoint_order": [...]                  // J+F, or empty for identity
//! }
//! ```
//!
//! Values are written with shortest round-trip formatting, so save then
//! load reproduces every `f64` bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, write_atomic, DataError};
use crate::hand_model::{AssetParts, HandModelAsset, HandModelError};
use crate::linalg::Vec3;
use crate::scalar::Real;

pub const ASSET_FORMAT_VERSION: u64 = 1;

/// The procedural hand rig (`synthetic_hand_rig(0)`) as shipped in
/// `assets/synthetic_hand_rig.json`.
pub const BUNDLED_RIG_JSON: &str = include_str!("../../assets/synthetic_hand_rig.json");
const ASSET_FORMAT: &str = "handmesh-asset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    vertices: usize,
    joints: usize,
    shape: usize,
    fingertips: usize,
    faces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetFile {
    format: String,
    format_version: u64,
    dims: Dims,
    parents: Vec<i64>,
    template_vertices: Vec<[f64; 3]>,
    shape_dirs: Vec<f64>,
    pose_dirs: Vec<f64>,
    joint_regressor: Vec<f64>,
    skinning_weights: Vec<f64>,
    fingertip_vertex_ids: Vec<usize>,
    faces: Vec<[usize; 3]>,
    #[serde(default)]
    keypoint_order: Vec<usize>,
}

fn size(field: &'static str, expected: usize, got: usize) -> Result<(), DataError> {
    if expected == got {
        Ok(())
    } else {
        Err(HandModelError::SizeMismatch { field, expected, got }.into())
    }
}

pub fn asset_from_json<T: Real>(text: &str) -> Result<HandModelAsset<T>, DataError> {
    let file: AssetFile = serde_json::from_str(text).map_err(|e| DataError::Syntax {
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.format != ASSET_FORMAT {
        return Err(DataError::Schema(format!(
            "format is '{}', expected '{ASSET_FORMAT}'",
            file.format
        )));
    }
    if file.format_version != ASSET_FORMAT_VERSION {
        return Err(DataError::UnsupportedVersion {
            found: file.format_version,
            supported: ASSET_FORMAT_VERSION,
        });
    }
    let d = &file.dims;
    size("parents", d.joints, file.parents.len())?;
    size("template_vertices", d.vertices, file.template_vertices.len())?;
    size("fingertip_vertex_ids", d.fingertips, file.fingertip_vertex_ids.len())?;
    size("faces", d.faces, file.faces.len())?;
    let mut parents = Vec::with_capacity(d.joints);
    for (j, &p) in file.parents.iter().enumerate() {
        parents.push(match p {
            -1 => None,
            p if p >= 0 && (p as usize) < d.joints => Some(p as usize),
            p => {
                return Err(DataError::Schema(format!(
                    "parents[{j}] = {p} is neither -1 nor a joint index"
                )))
            }
        });
    }
    let conv = |xs: &[f64]| xs.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
    let parts = AssetParts {
        template_vertices: file
            .template_vertices
            .iter()
            .map(|p| Vec3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2])))
            .collect(),
        shape_dirs: conv(&file.shape_dirs),
        pose_dirs: conv(&file.pose_dirs),
        joint_regressor: conv(&file.joint_regressor),
        skinning_weights: conv(&file.skinning_weights),
        parents,
        fingertip_vertex_ids: file.fingertip_vertex_ids,
        num_shape: d.shape,
        faces: file.faces,
        keypoint_order: file.keypoint_order,
    };
    Ok(HandModelAsset::new(parts)?)
}

pub fn asset_to_json<T: Real>(asset: &HandModelAsset<T>) -> String {
    let p = asset.parts();
    let conv = |xs: &[T]| xs.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    let file = AssetFile {
        format: ASSET_FORMAT.into(),
        format_version: ASSET_FORMAT_VERSION,
        dims: Dims {
            vertices: asset.num_vertices(),
            joints: asset.num_joints(),
            shape: asset.num_shape(),
            fingertips: p.fingertip_vertex_ids.len(),
            faces: p.faces.len(),
        },
        parents: p.parents.iter().map(|q| q.map_or(-1, |i| i as i64)).collect(),
        template_vertices: p
            .template_vertices
            .iter()
            .map(|v| [v[0].to_f64_lossy(), v[1].to_f64_lossy(), v[2].to_f64_lossy()])
            .collect(),
        shape_dirs: conv(&p.shape_dirs),
        pose_dirs: conv(&p.pose_dirs),
        joint_regressor: conv(&p.joint_regressor),
        skinning_weights: conv(&p.skinning_weights),
        fingertip_vertex_ids: p.fingertip_vertex_ids.clone(),
        faces: p.faces.clone(),
        keypoint_order: p.keypoint_order.clone(),
    };
    let mut s = serde_json::to_string(&file).expect("asset serializes");
    s.push('\n');
    s
}

pub fn load_asset<T: Real>(path: impl AsRef<Path>) -> Result<HandModelAsset<T>, DataError> {
    asset_from_json(&read_to_string(path.as_ref())?)
}

pub fn save_asset<T: Real>(asset: &HandModelAsset<T>, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_atomic(path.as_ref(), asset_to_json(asset).as_bytes())
}

pub fn bundled_rig<T: Real>() -> HandModelAsset<T> {
    asset_from_json(BUNDLED_RIG_JSON).expect("bundled rig is valid")
}
