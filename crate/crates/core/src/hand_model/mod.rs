//! Differentiable parametric hand model.
//!
//! A [`HandModelAsset`] is a rig in the MANO layout: template mesh, shape and
//! pose-corrective blend shapes, a joint regressor, skinning weights and a
//! kinematic tree. [`pose_hand`] maps a [`HandState`] (axis-angle pose and
//! shape coefficients) to a posed mesh plus `K = J + fingertips` joints.
//!
//! Array layouts (all row-major):
//!
//! | field               | shape          | index                        |
//! |---------------------|----------------|------------------------------|
//! | `shape_dirs`        | `V x 3 x B`    | `(v * 3 + c) * B + b`        |
//! | `pose_dirs`         | `V x 3 x P`    | `(v * 3 + c) * P + p`, `P = 9 (J - 1)` |
//! | `joint_regressor`   | `J x V`        | `j * V + v`                  |
//! | `skinning_weights`  | `V x J`        | `v * J + j`                  |
//!
//! The pose feature is the row-major flattening of `R_j - I` for the
//! articulated joints `1..J`; the global orientation does not contribute.
//!
//! Joints are stored root-first: `parents[0]` is `None` and every other
//! parent index is smaller than its child. [`HandModelAsset::new`] reorders
//! out-of-order inputs and permutes every dependent array.

mod forward;
pub mod synthetic;

use thiserror::Error;

use crate::linalg::Vec3;
use crate::rotation::RotationError;
use crate::scalar::Real;

pub use forward::{
    forward_kinematics, forward_kinematics_from_rotations, pose_blend, pose_blend_from_rotations,
    pose_hand, pose_hand_from_rotations, pose_hand_with_gradients, regress_joints, shape_blend,
    skin, skinning_transforms, theta_cotangent, HandForward, PoseGradients, PosedHand,
    RigCotangent, RigidTransform,
};

/// Tolerance on the unit row sums of skinning weights and joint regressor.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum HandModelError {
    #[error("size mismatch for {field}: expected {expected}, got {got}")]
    SizeMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("skinning weights row {row} sums to {sum}, expected 1")]
    SkinningRowSum { row: usize, sum: f64 },
    #[error("skinning weight ({row}, {col}) is negative: {value}")]
    NegativeWeight { row: usize, col: usize, value: f64 },
    #[error("joint regressor row {row} sums to {sum}, expected 1")]
    RegressorRowSum { row: usize, sum: f64 },
    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),
    #[error("{field} index {index} out of range (< {bound})")]
    IndexOutOfRange {
        field: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("keypoint order is not a permutation of 0..{0}")]
    KeypointOrder(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

/// Raw rig arrays, validated by [`HandModelAsset::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssetParts<T> {
    pub template_vertices: Vec<Vec3<T>>,
    pub shape_dirs: Vec<T>,
    pub pose_dirs: Vec<T>,
    pub joint_regressor: Vec<T>,
    pub skinning_weights: Vec<T>,
    pub parents: Vec<Option<usize>>,
    pub fingertip_vertex_ids: Vec<usize>,
    pub num_shape: usize,
    pub faces: Vec<[usize; 3]>,
    /// `keypoint_order[i]` is the model joint (in `0..K`) reported as
    /// annotation keypoint `i`. Empty means identity.
    pub keypoint_order: Vec<usize>,
}

/// Validated, immutable hand rig.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModelAsset<T> {
    parts: AssetParts<T>,
}

impl<T: Real> HandModelAsset<T> {
    /// Validates every invariant and reorders joints root-first.
    pub fn new(parts: AssetParts<T>) -> Result<Self, HandModelError> {
        let mut parts = parts;
        let nv = parts.template_vertices.len();
        let nj = parts.parents.len();
        let nb = parts.num_shape;
        if nj == 0 {
            return Err(HandModelError::InvalidTree("no joints".into()));
        }
        let check = |field, expected, got| {
            if expected != got {
                Err(HandModelError::SizeMismatch {
                    field,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("shape_dirs", nv * 3 * nb, parts.shape_dirs.len())?;
        check("pose_dirs", nv * 3 * 9 * (nj - 1), parts.pose_dirs.len())?;
        check("joint_regressor", nj * nv, parts.joint_regressor.len())?;
        check("skinning_weights", nv * nj, parts.skinning_weights.len())?;

        if !parts.template_vertices.iter().all(|v| v.is_finite()) {
            return Err(HandModelError::NonFinite("template_vertices"));
        }
        for (name, arr) in [
            ("shape_dirs", &parts.shape_dirs),
            ("pose_dirs", &parts.pose_dirs),
            ("joint_regressor", &parts.joint_regressor),
            ("skinning_weights", &parts.skinning_weights),
        ] {
            if !crate::scalar::all_finite(arr) {
                return Err(HandModelError::NonFinite(name));
            }
        }

        let tol = T::lit(ROW_SUM_TOLERANCE);
        for v in 0..nv {
            let row = &parts.skinning_weights[v * nj..(v + 1) * nj];
            if let Some((col, &value)) = row.iter().enumerate().find(|(_, w)| **w < T::zero()) {
                return Err(HandModelError::NegativeWeight {
                    row: v,
                    col,
                    value: value.to_f64_lossy(),
                });
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Err(HandModelError::SkinningRowSum {
                    row: v,
                    sum: sum.to_f64_lossy(),
                });
            }
        }
        for j in 0..nj {
            let sum: T = parts.joint_regressor[j * nv..(j + 1) * nv].iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Err(HandModelError::RegressorRowSum {
                    row: j,
                    sum: sum.to_f64_lossy(),
                });
            }
        }
        for &id in &parts.fingertip_vertex_ids {
            if id >= nv {
                return Err(HandModelError::IndexOutOfRange {
                    field: "fingertip_vertex_ids",
                    index: id,
                    bound: nv,
                });
            }
        }
        for face in &parts.faces {
            for &id in face {
                if id >= nv {
                    return Err(HandModelError::IndexOutOfRange {
                        field: "faces",
                        index: id,
                        bound: nv,
                    });
                }
            }
        }
        let nk = nj + parts.fingertip_vertex_ids.len();
        if parts.keypoint_order.is_empty() {
            parts.keypoint_order = (0..nk).collect();
        }
        let mut seen = vec![false; nk];
        if parts.keypoint_order.len() != nk {
            return Err(HandModelError::KeypointOrder(nk));
        }
        for &k in &parts.keypoint_order {
            if k >= nk || seen[k] {
                return Err(HandModelError::KeypointOrder(nk));
            }
            seen[k] = true;
        }

        let order = topological_order(&parts.parents)?;
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            parts = permute_joints(parts, &order);
        }
        Ok(HandModelAsset { parts })
    }

    pub fn parts(&self) -> &AssetParts<T> {
        &self.parts
    }

    pub fn into_parts(self) -> AssetParts<T> {
        self.parts
    }

    pub fn num_vertices(&self) -> usize {
        self.parts.template_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parts.parents.len()
    }

    pub fn num_shape(&self) -> usize {
        self.parts.num_shape
    }

    /// Regressed joints plus fingertips.
    pub fn num_keypoints(&self) -> usize {
        self.num_joints() + self.parts.fingertip_vertex_ids.len()
    }

    /// Length of the pose-corrective feature, `9 (J - 1)`.
    pub fn num_pose_features(&self) -> usize {
        9 * (self.num_joints() - 1)
    }

    pub fn template_vertices(&self) -> &[Vec3<T>] {
        &self.parts.template_vertices
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parts.parents
    }

    pub fn fingertip_vertex_ids(&self) -> &[usize] {
        &self.parts.fingertip_vertex_ids
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.parts.faces
    }

    pub fn keypoint_order(&self) -> &[usize] {
        &self.parts.keypoint_order
    }

    /// Model keypoints (FK joints, then fingertips) rearranged into
    /// annotation order.
    pub fn to_annotation_order<U: Copy>(&self, model_keypoints: &[U]) -> Vec<U> {
        self.parts.keypoint_order.iter().map(|&k| model_keypoints[k]).collect()
    }

    /// Adjoint of [`Self::to_annotation_order`] for cotangents.
    pub fn from_annotation_order(&self, d_keypoints: &[Vec3<T>]) -> Vec<Vec3<T>> {
        let mut out = vec![Vec3::zero(); self.num_keypoints()];
        for (d, &k) in d_keypoints.iter().zip(&self.parts.keypoint_order) {
            out[k] += *d;
        }
        out
    }

    #[inline]
    pub fn shape_dir(&self, v: usize, c: usize, b: usize) -> T {
        self.parts.shape_dirs[(v * 3 + c) * self.parts.num_shape + b]
    }

    #[inline]
    pub fn pose_dir(&self, v: usize, c: usize, p: usize) -> T {
        self.parts.pose_dirs[(v * 3 + c) * self.num_pose_features() + p]
    }

    #[inline]
    pub fn regressor_weight(&self, j: usize, v: usize) -> T {
        self.parts.joint_regressor[j * self.num_vertices() + v]
    }

    #[inline]
    pub fn skinning_weight(&self, v: usize, j: usize) -> T {
        self.parts.skinning_weights[v * self.num_joints() + j]
    }

    /// Children lists of the kinematic tree.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_joints()];
        for (j, p) in self.parts.parents.iter().enumerate() {
            if let Some(p) = p {
                out[*p].push(j);
            }
        }
        out
    }

    /// Joints in the subtree rooted at `j`, including `j`.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let children = self.children();
        let mut stack = vec![j];
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(children[n].iter().copied());
        }
        out.sort_unstable();
        out
    }

    /// Converts the scalar type.
    pub fn cast<U: Real>(&self) -> HandModelAsset<U> {
        let c = |xs: &[T]| xs.iter().map(|x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        HandModelAsset {
            parts: AssetParts {
                template_vertices: self.parts.template_vertices.iter().map(|v| v.cast()).collect(),
                shape_dirs: c(&self.parts.shape_dirs),
                pose_dirs: c(&self.parts.pose_dirs),
                joint_regressor: c(&self.parts.joint_regressor),
                skinning_weights: c(&self.parts.skinning_weights),
                parents: self.parts.parents.clone(),
                fingertip_vertex_ids: self.parts.fingertip_vertex_ids.clone(),
                num_shape: self.parts.num_shape,
                faces: self.parts.faces.clone(),
                keypoint_order: self.parts.keypoint_order.clone(),
            },
        }
    }
}

/// Root-first breadth-first order of the joints. Fails unless `parents`
/// is a tree rooted at joint 0.
fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>, HandModelError> {
    let n = parents.len();
    if parents[0].is_some() {
        return Err(HandModelError::InvalidTree("joint 0 must be the root".into()));
    }
    let mut children = vec![Vec::new(); n];
    for (j, p) in parents.iter().enumerate().skip(1) {
        match p {
            None => {
                return Err(HandModelError::InvalidTree(format!(
                    "joint {j} has no parent; only joint 0 may be a root"
                )))
            }
            Some(p) if *p >= n => {
                return Err(HandModelError::IndexOutOfRange {
                    field: "parents",
                    index: *p,
                    bound: n,
                })
            }
            Some(p) if *p == j => {
                return Err(HandModelError::InvalidTree(format!("joint {j} is its own parent")))
            }
            Some(p) => children[*p].push(j),
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(j) = queue.pop_front() {
        order.push(j);
        queue.extend(children[j].iter().copied());
    }
    if order.len() != n {
        return Err(HandModelError::InvalidTree(
            "cycle detected: some joints are unreachable from the root".into(),
        ));
    }
    // keep the original order when it is already root-first
    if parents
        .iter()
        .enumerate()
        .skip(1)
        .all(|(j, p)| p.map_or(false, |p| p < j))
    {
        return Ok((0..n).collect());
    }
    Ok(order)
}

/// `order[new] = old`.
fn permute_joints<T: Real>(parts: AssetParts<T>, order: &[usize]) -> AssetParts<T> {
    let nj = order.len();
    let nv = parts.template_vertices.len();
    let mut new_of_old = vec![0usize; nj];
    for (new, &old) in order.iter().enumerate() {
        new_of_old[old] = new;
    }
    let parents = order
        .iter()
        .map(|&old| parts.parents[old].map(|p| new_of_old[p]))
        .collect();
    let mut joint_regressor = vec![T::zero(); nj * nv];
    for (new, &old) in order.iter().enumerate() {
        joint_regressor[new * nv..(new + 1) * nv]
            .copy_from_slice(&parts.joint_regressor[old * nv..(old + 1) * nv]);
    }
    let mut skinning_weights = vec![T::zero(); nv * nj];
    for v in 0..nv {
        for (new, &old) in order.iter().enumerate() {
            skinning_weights[v * nj + new] = parts.skinning_weights[v * nj + old];
        }
    }
    let np = 9 * (nj - 1);
    let mut pose_dirs = vec![T::zero(); parts.pose_dirs.len()];
    for row in 0..nv * 3 {
        for (new, &old) in order.iter().enumerate().skip(1) {
            let src = row * np + (old - 1) * 9;
            let dst = row * np + (new - 1) * 9;
            pose_dirs[dst..dst + 9].copy_from_slice(&parts.pose_dirs[src..src + 9]);
        }
    }
    let keypoint_order = parts
        .keypoint_order
        .iter()
        .map(|&k| if k < nj { new_of_old[k] } else { k })
        .collect();
    AssetParts {
        parents,
        joint_regressor,
        skinning_weights,
        pose_dirs,
        keypoint_order,
        ..parts
    }
}

/// Pose and shape parameters.
///
/// `theta` holds `3 J` axis-angle entries in radians: the global orientation
/// first, then one triple per articulated joint in asset order.
#[derive(Debug, Clone, PartialEq)]
pub struct HandState<T> {
    pub theta: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> HandState<T> {
    /// Rest pose, mean shape.
    pub fn rest(asset: &HandModelAsset<T>) -> Self {
        HandState {
            theta: vec![T::zero(); 3 * asset.num_joints()],
            beta: vec![T::zero(); asset.num_shape()],
        }
    }

    pub fn joint_axis_angle(&self, j: usize) -> Vec3<T> {
        Vec3::from_slice(&self.theta[3 * j..3 * j + 3])
    }

    pub fn validate(&self, asset: &HandModelAsset<T>) -> Result<(), HandModelError> {
        if self.theta.len() != 3 * asset.num_joints() {
            return Err(HandModelError::SizeMismatch {
                field: "theta",
                expected: 3 * asset.num_joints(),
                got: self.theta.len(),
            });
        }
        if self.beta.len() != asset.num_shape() {
            return Err(HandModelError::SizeMismatch {
                field: "beta",
                expected: asset.num_shape(),
                got: self.beta.len(),
            });
        }
        if !crate::scalar::all_finite(&self.theta) {
            return Err(HandModelError::NonFinite("theta"));
        }
        if !crate::scalar::all_finite(&self.beta) {
            return Err(HandModelError::NonFinite("beta"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> HandState<U> {
        HandState {
            theta: self.theta.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
            beta: self.beta.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}
