use crate::linalg::{DenseMatrix, Mat3, Vec3};
use crate::rotation::{rodrigues, rodrigues_vjp};
use crate::scalar::Real;

use super::{HandModelAsset, HandModelError, HandState};

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }
}

/// Output of the hand model.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedHand<T> {
    pub vertices: Vec<Vec3<T>>,
    /// `J` kinematic joints followed by the fingertip vertices.
    pub joints: Vec<Vec3<T>>,
    /// World rotation of every joint.
    pub joint_rotations: Vec<Mat3<T>>,
}

fn check_len(field: &'static str, expected: usize, got: usize) -> Result<(), HandModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(HandModelError::SizeMismatch {
            field,
            expected,
            got,
        })
    }
}

/// Shape-dependent vertex displacement `S * beta`.
pub fn shape_blend<T: Real>(
    asset: &HandModelAsset<T>,
    beta: &[T],
) -> Result<Vec<Vec3<T>>, HandModelError> {
    check_len("beta", asset.num_shape(), beta.len())?;
    let nb = asset.num_shape();
    let dirs = &asset.parts().shape_dirs;
    Ok((0..asset.num_vertices())
        .map(|v| {
            let mut d = Vec3::zero();
            for c in 0..3 {
                let row = &dirs[(v * 3 + c) * nb..(v * 3 + c + 1) * nb];
                d[c] = row.iter().zip(beta).map(|(s, b)| *s * *b).sum();
            }
            d
        })
        .collect())
}

fn local_rotations<T: Real>(
    asset: &HandModelAsset<T>,
    theta: &[T],
) -> Result<Vec<Mat3<T>>, HandModelError> {
    check_len("theta", 3 * asset.num_joints(), theta.len())?;
    theta
        .chunks_exact(3)
        .map(|aa| Ok(rodrigues(&Vec3::from_slice(aa))?))
        .collect()
}

/// Pose-corrective displacement from axis-angle pose.
pub fn pose_blend<T: Real>(
    asset: &HandModelAsset<T>,
    theta: &[T],
) -> Result<Vec<Vec3<T>>, HandModelError> {
    let rots = local_rotations(asset, theta)?;
    pose_blend_from_rotations(asset, &rots)
}

/// Pose-corrective displacement from local joint rotations (root ignored).
pub fn pose_blend_from_rotations<T: Real>(
    asset: &HandModelAsset<T>,
    rotations: &[Mat3<T>],
) -> Result<Vec<Vec3<T>>, HandModelError> {
    check_len("rotations", asset.num_joints(), rotations.len())?;
    let feature = pose_feature(rotations);
    let np = asset.num_pose_features();
    let dirs = &asset.parts().pose_dirs;
    Ok((0..asset.num_vertices())
        .map(|v| {
            let mut d = Vec3::zero();
            for c in 0..3 {
                let row = &dirs[(v * 3 + c) * np..(v * 3 + c + 1) * np];
                d[c] = row.iter().zip(&feature).map(|(p, f)| *p * *f).sum();
            }
            d
        })
        .collect())
}

fn pose_feature<T: Real>(rotations: &[Mat3<T>]) -> Vec<T> {
    let identity = Mat3::identity();
    rotations[1..]
        .iter()
        .flat_map(|r| (*r - identity).to_flat())
        .collect()
}

/// Joint locations regressed from vertices.
pub fn regress_joints<T: Real>(asset: &HandModelAsset<T>, vertices: &[Vec3<T>]) -> Vec<Vec3<T>> {
    let nv = asset.num_vertices();
    let reg = &asset.parts().joint_regressor;
    (0..asset.num_joints())
        .map(|j| {
            let mut acc = Vec3::zero();
            for (w, p) in reg[j * nv..(j + 1) * nv].iter().zip(vertices) {
                if *w != T::zero() {
                    acc += p.scale(*w);
                }
            }
            acc
        })
        .collect()
}

/// World rotations and positions of every joint from axis-angle pose.
pub fn forward_kinematics<T: Real>(
    asset: &HandModelAsset<T>,
    theta: &[T],
    rest_joints: &[Vec3<T>],
) -> Result<(Vec<Mat3<T>>, Vec<Vec3<T>>), HandModelError> {
    let rots = local_rotations(asset, theta)?;
    forward_kinematics_from_rotations(asset.parents(), &rots, rest_joints)
}

/// Forward kinematics over a root-first tree.
pub fn forward_kinematics_from_rotations<T: Real>(
    parents: &[Option<usize>],
    rotations: &[Mat3<T>],
    rest_joints: &[Vec3<T>],
) -> Result<(Vec<Mat3<T>>, Vec<Vec3<T>>), HandModelError> {
    check_len("rotations", parents.len(), rotations.len())?;
    check_len("rest_joints", parents.len(), rest_joints.len())?;
    let mut world_rot = Vec::with_capacity(parents.len());
    let mut world_pos = Vec::with_capacity(parents.len());
    for (j, parent) in parents.iter().enumerate() {
        match parent {
            None => {
                world_rot.push(rotations[j]);
                world_pos.push(rest_joints[j]);
            }
            Some(p) => {
                let wp: Mat3<T> = world_rot[*p];
                world_rot.push(wp.mul_mat(&rotations[j]));
                let offset = rest_joints[j] - rest_joints[*p];
                world_pos.push(world_pos[*p] + wp.mul_vec(&offset));
            }
        }
    }
    Ok((world_rot, world_pos))
}

/// Rest-relative skinning transforms: each maps a rest-pose point attached to
/// joint `j` to its posed location.
pub fn skinning_transforms<T: Real>(
    world_rot: &[Mat3<T>],
    world_pos: &[Vec3<T>],
    rest_joints: &[Vec3<T>],
) -> Vec<RigidTransform<T>> {
    world_rot
        .iter()
        .zip(world_pos)
        .zip(rest_joints)
        .map(|((r, g), j)| RigidTransform {
            rotation: *r,
            translation: *g - r.mul_vec(j),
        })
        .collect()
}

/// Linear blend skinning.
pub fn skin<T: Real>(
    asset: &HandModelAsset<T>,
    vertices: &[Vec3<T>],
    transforms: &[RigidTransform<T>],
) -> Result<Vec<Vec3<T>>, HandModelError> {
    check_len("vertices", asset.num_vertices(), vertices.len())?;
    check_len("transforms", asset.num_joints(), transforms.len())?;
    let nj = asset.num_joints();
    let weights = &asset.parts().skinning_weights;
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let mut acc = Vec3::zero();
            for (w, t) in weights[v * nj..(v + 1) * nj].iter().zip(transforms) {
                if *w != T::zero() {
                    acc += t.apply(p).scale(*w);
                }
            }
            acc
        })
        .collect())
}

/// Poses the hand from axis-angle parameters.
pub fn pose_hand<T: Real>(
    asset: &HandModelAsset<T>,
    state: &HandState<T>,
) -> Result<PosedHand<T>, HandModelError> {
    state.validate(asset)?;
    let rots = local_rotations(asset, &state.theta)?;
    pose_hand_from_rotations(asset, &rots, &state.beta)
}

/// Poses the hand from local joint rotations.
pub fn pose_hand_from_rotations<T: Real>(
    asset: &HandModelAsset<T>,
    rotations: &[Mat3<T>],
    beta: &[T],
) -> Result<PosedHand<T>, HandModelError> {
    Ok(HandForward::run(asset, rotations, beta)?.posed())
}

/// Intermediate values of one forward pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct HandForward<'a, T> {
    asset: &'a HandModelAsset<T>,
    rotations: Vec<Mat3<T>>,
    rest_joints: Vec<Vec3<T>>,
    posed_rest: Vec<Vec3<T>>,
    world_rot: Vec<Mat3<T>>,
    world_pos: Vec<Vec3<T>>,
    vertices: Vec<Vec3<T>>,
}

/// Cotangents of the rig inputs: local joint rotations and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RigCotangent<T> {
    pub rotations: Vec<Mat3<T>>,
    pub beta: Vec<T>,
}

impl<'a, T: Real> HandForward<'a, T> {
    pub fn run(
        asset: &'a HandModelAsset<T>,
        rotations: &[Mat3<T>],
        beta: &[T],
    ) -> Result<Self, HandModelError> {
        check_len("rotations", asset.num_joints(), rotations.len())?;
        let shape = shape_blend(asset, beta)?;
        let shaped: Vec<Vec3<T>> = asset
            .template_vertices()
            .iter()
            .zip(&shape)
            .map(|(t, d)| *t + *d)
            .collect();
        let rest_joints = regress_joints(asset, &shaped);
        let pose = pose_blend_from_rotations(asset, rotations)?;
        let posed_rest: Vec<Vec3<T>> = shaped.iter().zip(&pose).map(|(s, d)| *s + *d).collect();
        let (world_rot, world_pos) =
            forward_kinematics_from_rotations(asset.parents(), rotations, &rest_joints)?;
        let transforms = skinning_transforms(&world_rot, &world_pos, &rest_joints);
        let vertices = skin(asset, &posed_rest, &transforms)?;
        Ok(HandForward {
            asset,
            rotations: rotations.to_vec(),
            rest_joints,
            posed_rest,
            world_rot,
            world_pos,
            vertices,
        })
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }

    pub fn joints(&self) -> Vec<Vec3<T>> {
        let mut joints = self.world_pos.clone();
        joints.extend(
            self.asset
                .fingertip_vertex_ids()
                .iter()
                .map(|&i| self.vertices[i]),
        );
        joints
    }

    pub fn world_rotations(&self) -> &[Mat3<T>] {
        &self.world_rot
    }

    pub fn rest_joints(&self) -> &[Vec3<T>] {
        &self.rest_joints
    }

    pub fn posed(&self) -> PosedHand<T> {
        PosedHand {
            vertices: self.vertices.clone(),
            joints: self.joints(),
            joint_rotations: self.world_rot.clone(),
        }
    }

    /// Reverse pass: pulls cotangents on the output vertices (`V` entries, or
    /// empty) and joints (`K` entries, or empty) back to the local rotations
    /// and shape coefficients.
    pub fn vjp(
        &self,
        d_vertices: &[Vec3<T>],
        d_joints: &[Vec3<T>],
    ) -> Result<RigCotangent<T>, HandModelError> {
        let asset = self.asset;
        let (nv, nj, nb) = (asset.num_vertices(), asset.num_joints(), asset.num_shape());
        if !d_vertices.is_empty() {
            check_len("d_vertices", nv, d_vertices.len())?;
        }
        if !d_joints.is_empty() {
            check_len("d_joints", asset.num_keypoints(), d_joints.len())?;
        }

        let mut d_out = if d_vertices.is_empty() {
            vec![Vec3::zero(); nv]
        } else {
            d_vertices.to_vec()
        };
        let mut d_world_pos = vec![Vec3::zero(); nj];
        if !d_joints.is_empty() {
            d_world_pos.copy_from_slice(&d_joints[..nj]);
            for (t, &vid) in asset.fingertip_vertex_ids().iter().enumerate() {
                d_out[vid] += d_joints[nj + t];
            }
        }

        let mut d_world_rot = vec![Mat3::zero(); nj];
        let mut d_rest_joints = vec![Vec3::zero(); nj];
        let mut d_posed = vec![Vec3::zero(); nv];
        let weights = &asset.parts().skinning_weights;
        for v in 0..nv {
            let g = d_out[v];
            if g == Vec3::zero() {
                continue;
            }
            for j in 0..nj {
                let w = weights[v * nj + j];
                if w == T::zero() {
                    continue;
                }
                let r = self.posed_rest[v] - self.rest_joints[j];
                let gw = g.scale(w);
                d_world_rot[j] += gw.outer(&r);
                d_world_pos[j] += gw;
                let back = self.world_rot[j].tr_mul_vec(&gw);
                d_posed[v] += back;
                d_rest_joints[j] -= back;
            }
        }

        let mut d_rot = vec![Mat3::zero(); nj];
        for j in (0..nj).rev() {
            match asset.parents()[j] {
                None => {
                    d_rot[j] += d_world_rot[j];
                    d_rest_joints[j] += d_world_pos[j];
                }
                Some(p) => {
                    let wp = self.world_rot[p];
                    let offset = self.rest_joints[j] - self.rest_joints[p];
                    d_rot[j] += wp.transpose().mul_mat(&d_world_rot[j]);
                    let to_parent = d_world_rot[j].mul_mat(&self.rotations[j].transpose())
                        + d_world_pos[j].outer(&offset);
                    d_world_rot[p] += to_parent;
                    let gp = d_world_pos[j];
                    d_world_pos[p] += gp;
                    let back = wp.tr_mul_vec(&gp);
                    d_rest_joints[j] += back;
                    d_rest_joints[p] -= back;
                }
            }
        }

        // pose correctives
        let np = asset.num_pose_features();
        let mut d_feature = vec![T::zero(); np];
        let pose_dirs = &asset.parts().pose_dirs;
        for v in 0..nv {
            let g = d_posed[v];
            if g == Vec3::zero() {
                continue;
            }
            for c in 0..3 {
                if g[c] == T::zero() {
                    continue;
                }
                let row = &pose_dirs[(v * 3 + c) * np..(v * 3 + c + 1) * np];
                for (df, p) in d_feature.iter_mut().zip(row) {
                    *df += *p * g[c];
                }
            }
        }
        for j in 1..nj {
            d_rot[j] += Mat3::from_flat(&d_feature[(j - 1) * 9..j * 9]);
        }

        // shaped vertices feed both the pose-corrected rest mesh and the regressor
        let mut d_shaped = d_posed;
        let reg = &asset.parts().joint_regressor;
        for j in 0..nj {
            let g = d_rest_joints[j];
            if g == Vec3::zero() {
                continue;
            }
            for (v, w) in reg[j * nv..(j + 1) * nv].iter().enumerate() {
                if *w != T::zero() {
                    d_shaped[v] += g.scale(*w);
                }
            }
        }
        let shape_dirs = &asset.parts().shape_dirs;
        let mut d_beta = vec![T::zero(); nb];
        for v in 0..nv {
            for c in 0..3 {
                let g = d_shaped[v][c];
                if g == T::zero() {
                    continue;
                }
                let row = &shape_dirs[(v * 3 + c) * nb..(v * 3 + c + 1) * nb];
                for (db, s) in d_beta.iter_mut().zip(row) {
                    *db += *s * g;
                }
            }
        }
        Ok(RigCotangent {
            rotations: d_rot,
            beta: d_beta,
        })
    }
}

/// Chains rotation cotangents through Rodrigues to the axis-angle pose.
pub fn theta_cotangent<T: Real>(theta: &[T], d_rotations: &[Mat3<T>]) -> Vec<T> {
    theta
        .chunks_exact(3)
        .zip(d_rotations)
        .flat_map(|(aa, g)| rodrigues_vjp(&Vec3::from_slice(aa), g).0)
        .collect()
}

/// Posed hand with full Jacobians of joints (and optionally vertices).
#[derive(Debug, Clone)]
pub struct PoseGradients<T> {
    pub posed: PosedHand<T>,
    /// `(3 K) x (3 J)`; row `3 k + c` is coordinate `c` of joint `k`.
    pub joints_wrt_theta: DenseMatrix<T>,
    /// `(3 K) x B`.
    pub joints_wrt_beta: DenseMatrix<T>,
    /// `(3 V) x (3 J)`, present when requested.
    pub vertices_wrt_theta: Option<DenseMatrix<T>>,
    /// `(3 V) x B`, present when requested.
    pub vertices_wrt_beta: Option<DenseMatrix<T>>,
}

/// Poses the hand and assembles Jacobians row by row from reverse passes.
pub fn pose_hand_with_gradients<T: Real>(
    asset: &HandModelAsset<T>,
    state: &HandState<T>,
    with_vertices: bool,
) -> Result<PoseGradients<T>, HandModelError> {
    state.validate(asset)?;
    let rots = local_rotations(asset, &state.theta)?;
    let fwd = HandForward::run(asset, &rots, &state.beta)?;
    let (nk, nv, nj, nb) = (
        asset.num_keypoints(),
        asset.num_vertices(),
        asset.num_joints(),
        asset.num_shape(),
    );
    let jac_theta_b = |rows: usize| DenseMatrix::zeros(rows, 3 * nj);
    let jac_beta_b = |rows: usize| DenseMatrix::zeros(rows, nb);

    let mut joints_wrt_theta = jac_theta_b(3 * nk);
    let mut joints_wrt_beta = jac_beta_b(3 * nk);
    let mut seed = vec![Vec3::zero(); nk];
    for k in 0..nk {
        for c in 0..3 {
            seed[k][c] = T::one();
            let ct = fwd.vjp(&[], &seed)?;
            seed[k][c] = T::zero();
            joints_wrt_theta.set_row(3 * k + c, &theta_cotangent(&state.theta, &ct.rotations));
            joints_wrt_beta.set_row(3 * k + c, &ct.beta);
        }
    }
    let (vertices_wrt_theta, vertices_wrt_beta) = if with_vertices {
        let mut jt = jac_theta_b(3 * nv);
        let mut jb = jac_beta_b(3 * nv);
        let mut seed = vec![Vec3::zero(); nv];
        for v in 0..nv {
            for c in 0..3 {
                seed[v][c] = T::one();
                let ct = fwd.vjp(&seed, &[])?;
                seed[v][c] = T::zero();
                jt.set_row(3 * v + c, &theta_cotangent(&state.theta, &ct.rotations));
                jb.set_row(3 * v + c, &ct.beta);
            }
        }
        (Some(jt), Some(jb))
    } else {
        (None, None)
    };
    Ok(PoseGradients {
        posed: fwd.posed(),
        joints_wrt_theta,
        joints_wrt_beta,
        vertices_wrt_theta,
        vertices_wrt_beta,
    })
}
