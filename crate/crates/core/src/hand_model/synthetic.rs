//! Procedural rigs that stand in for licensed model data.
//!
//! * [`tiny_rig`]: 12 vertices, 3-joint chain, 2 shape coefficients. Fully
//!   deterministic, used for hand-checkable unit tests.
//! * [`random_rig`]: random trees and weights for property tests.
//! * [`synthetic_hand_rig`]: a hand in the MANO layout (16 joints in MANO
//!   order, 10 shape coefficients, 5 fingertips, K = 21) with tube geometry.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Vec3;
use crate::scalar::Real;

use super::{AssetParts, HandModelAsset, HandState};

fn v3<T: Real>(x: f64, y: f64, z: f64) -> Vec3<T> {
    Vec3::new(T::lit(x), T::lit(y), T::lit(z))
}

/// Three joints in a chain along +x, four vertices around each joint.
pub fn tiny_rig<T: Real>() -> HandModelAsset<T> {
    let (nv, nj, nb) = (12usize, 3usize, 2usize);
    let offsets = [(0.1, 0.0), (0.0, 0.1), (-0.1, 0.0), (0.0, -0.1)];
    let mut template = Vec::new();
    for j in 0..nj {
        for (dy, dz) in offsets {
            template.push(v3(j as f64, dy, dz));
        }
    }
    let mut shape_dirs = vec![T::zero(); nv * 3 * nb];
    for (v, p) in template.iter().enumerate() {
        for c in 0..3 {
            // coefficient 0 scales the rig, coefficient 1 thickens it
            shape_dirs[(v * 3 + c) * nb] = p[c] * T::lit(0.1);
            if c > 0 {
                shape_dirs[(v * 3 + c) * nb + 1] = p[c] * T::lit(0.5);
            }
        }
    }
    let np = 9 * (nj - 1);
    let mut pose_dirs = vec![T::zero(); nv * 3 * np];
    for v in 4..nv {
        for c in 0..3 {
            for p in 0..np {
                let joint = 1 + p / 9;
                // correctives of joint 2 only touch vertices of joint 2
                if joint == 2 && v < 8 {
                    continue;
                }
                let k = (v * 31 + c * 7 + p * 3) % 11;
                pose_dirs[(v * 3 + c) * np + p] = T::lit(0.002 * (k as f64 - 5.0));
            }
        }
    }
    let mut joint_regressor = vec![T::zero(); nj * nv];
    for j in 0..nj {
        for k in 0..4 {
            joint_regressor[j * nv + 4 * j + k] = T::lit(0.25);
        }
    }
    let mut skinning_weights = vec![T::zero(); nv * nj];
    for v in 0..nv {
        let j = v / 4;
        match (j, v % 2) {
            (0, _) => skinning_weights[v * nj] = T::one(),
            (_, 0) => skinning_weights[v * nj + j] = T::one(),
            _ => {
                skinning_weights[v * nj + j] = T::lit(0.5);
                skinning_weights[v * nj + j - 1] = T::lit(0.5);
            }
        }
    }
    HandModelAsset::new(AssetParts {
        template_vertices: template,
        shape_dirs,
        pose_dirs,
        joint_regressor,
        skinning_weights,
        parents: vec![None, Some(0), Some(1)],
        fingertip_vertex_ids: vec![8, 9, 10, 11, 4],
        num_shape: nb,
        faces: vec![[0, 1, 4], [1, 5, 4], [4, 5, 8], [5, 9, 8]],
        keypoint_order: Vec::new(),
    })
    .expect("tiny rig is valid")
}

/// Options for [`random_rig`].
#[derive(Debug, Clone, Copy)]
pub struct RandomRigSpec {
    pub num_joints: usize,
    pub vertices_per_joint: usize,
    pub num_shape: usize,
    pub num_fingertips: usize,
    /// Scale of the pose-corrective blend shapes (0 disables them).
    pub pose_dir_scale: f64,
    /// Restrict each joint's correctives to vertices influenced by its subtree.
    pub local_pose_dirs: bool,
}

impl Default for RandomRigSpec {
    fn default() -> Self {
        RandomRigSpec {
            num_joints: 4,
            vertices_per_joint: 4,
            num_shape: 3,
            num_fingertips: 2,
            pose_dir_scale: 0.01,
            local_pose_dirs: true,
        }
    }
}

/// Random tree, random convex weights, random blend shapes.
///
/// Every vertex belongs to one joint; about half of them are fully weighted to
/// it and the rest blend with the parent joint.
pub fn random_rig<T: Real, R: Rng>(rng: &mut R, spec: RandomRigSpec) -> HandModelAsset<T> {
    let nj = spec.num_joints.max(1);
    let per = spec.vertices_per_joint.max(1);
    let nv = nj * per;
    let nb = spec.num_shape;
    let mut parents = vec![None];
    let mut joints = vec![Vec3::<f64>::zero()];
    for j in 1..nj {
        let p = rng.gen_range(0..j);
        parents.push(Some(p));
        let off = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        joints.push(joints[p] + off.scale(0.5));
    }
    let mut template = Vec::with_capacity(nv);
    let mut owner = Vec::with_capacity(nv);
    for (j, jp) in joints.iter().enumerate() {
        for _ in 0..per {
            let off = Vec3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            );
            template.push((*jp + off).cast::<T>());
            owner.push(j);
        }
    }
    let mut skinning_weights = vec![T::zero(); nv * nj];
    for v in 0..nv {
        let j = owner[v];
        match parents[j] {
            Some(p) if rng.gen_bool(0.5) => {
                let w: f64 = rng.gen_range(0.1..0.9);
                skinning_weights[v * nj + j] = T::lit(w);
                skinning_weights[v * nj + p] = T::one() - T::lit(w);
            }
            _ => skinning_weights[v * nj + j] = T::one(),
        }
    }
    let mut joint_regressor = vec![T::zero(); nj * nv];
    for j in 0..nj {
        let raw: Vec<f64> = (0..per).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (k, r) in raw.iter().enumerate() {
            joint_regressor[j * nv + j * per + k] = T::lit(r / total);
        }
    }
    let shape_dirs = (0..nv * 3 * nb)
        .map(|_| T::lit(rng.gen_range(-0.05..0.05)))
        .collect();

    let np = 9 * (nj - 1);
    // joints whose subtree contains j: ancestors-or-self
    let in_subtree = |root: usize, mut j: usize| loop {
        if j == root {
            return true;
        }
        match parents[j] {
            Some(p) => j = p,
            None => return false,
        }
    };
    let mut pose_dirs = vec![T::zero(); nv * 3 * np];
    if spec.pose_dir_scale > 0.0 {
        for v in 0..nv {
            for pj in 1..nj {
                let touched = (0..nj).any(|j| {
                    skinning_weights[v * nj + j] != T::zero() && in_subtree(pj, j)
                });
                if spec.local_pose_dirs && !touched {
                    continue;
                }
                for c in 0..3 {
                    for e in 0..9 {
                        pose_dirs[(v * 3 + c) * np + (pj - 1) * 9 + e] = T::lit(
                            rng.gen_range(-spec.pose_dir_scale..spec.pose_dir_scale),
                        );
                    }
                }
            }
        }
    }
    let fingertip_vertex_ids = (0..spec.num_fingertips)
        .map(|_| rng.gen_range(0..nv))
        .collect();
    HandModelAsset::new(AssetParts {
        template_vertices: template,
        shape_dirs,
        pose_dirs,
        joint_regressor,
        skinning_weights,
        parents,
        fingertip_vertex_ids,
        num_shape: nb,
        faces: Vec::new(),
        keypoint_order: Vec::new(),
    })
    .expect("random rig is valid")
}

/// Number of vertices on each ring of the tube geometry.
const RING: usize = 6;

/// MANO-ordered finger chains: index, middle, pinky, ring, thumb.
const FINGER_ORDER: [&str; 5] = ["index", "middle", "pinky", "ring", "thumb"];

/// Model output order (16 joints, then tips thumb..pinky) to the 21-keypoint
/// annotation order: wrist, thumb, index, middle, ring, pinky; base to tip.
pub const MANO_TO_ANNOTATION: [usize; 21] = [
    0, 13, 14, 15, 16, 1, 2, 3, 17, 4, 5, 6, 18, 10, 11, 12, 19, 7, 8, 9, 20,
];

/// A 16-joint, 10-coefficient hand in the MANO joint layout.
///
/// Geometry (meters): wrist at the origin, fingers along +y in the z = 0
/// plane. Each joint carries a ring of six vertices centered on it, so the
/// regressed rest joints coincide with the designed joint locations. The
/// seed drives the smooth shape bases and the subtree-local pose correctives.
pub fn synthetic_hand_rig<T: Real>(seed: u64) -> HandModelAsset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // base position, direction, segment lengths, radius
    let fingers: [(&str, [f64; 3], [f64; 3], [f64; 3], f64); 5] = [
        ("thumb", [0.028, 0.018, 0.0], [0.78, 0.62, 0.0], [0.034, 0.030, 0.024], 0.010),
        ("index", [0.024, 0.085, 0.0], [0.12, 0.99, 0.0], [0.042, 0.025, 0.020], 0.008),
        ("middle", [0.002, 0.090, 0.0], [0.0, 1.0, 0.0], [0.046, 0.028, 0.021], 0.008),
        ("ring", [-0.019, 0.086, 0.0], [-0.10, 0.99, 0.0], [0.042, 0.026, 0.020], 0.008),
        ("pinky", [-0.038, 0.076, 0.0], [-0.22, 0.97, 0.0], [0.032, 0.020, 0.018], 0.007),
    ];
    let nj = 16;
    let mut parents = vec![None; nj];
    let mut joint_pos = vec![Vec3::<f64>::zero(); nj];
    let mut tips = [Vec3::<f64>::zero(); 5];
    let mut finger_dir = vec![Vec3::new(0.0, 1.0, 0.0); nj];
    let mut finger_radius = vec![0.02; nj];
    let mut chain_of = [[0usize; 3]; 5]; // by name order of `fingers`
    for (fi, (name, base, dir, lens, radius)) in fingers.iter().enumerate() {
        let slot = FINGER_ORDER.iter().position(|n| n == name).unwrap();
        let first = 1 + 3 * slot;
        let d = Vec3::new(dir[0], dir[1], dir[2]);
        let d = d.scale(1.0 / d.norm());
        let mut p = Vec3::new(base[0], base[1], base[2]);
        for s in 0..3 {
            let j = first + s;
            parents[j] = Some(if s == 0 { 0 } else { j - 1 });
            joint_pos[j] = p;
            finger_dir[j] = d;
            finger_radius[j] = *radius;
            chain_of[fi][s] = j;
            p = p + d.scale(lens[s]);
        }
        tips[fi] = p;
    }

    let mut template: Vec<Vec3<f64>> = Vec::new();
    let mut weights: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut joint_rings: Vec<Vec<usize>> = vec![Vec::new(); nj];
    let mut faces = Vec::new();

    let ring_at = |center: Vec3<f64>, dir: Vec3<f64>, radius: f64| -> Vec<Vec3<f64>> {
        let z = Vec3::new(0.0, 0.0, 1.0);
        let e1 = dir.cross(&z);
        let e1 = e1.scale(1.0 / e1.norm());
        let e2 = dir.cross(&e1);
        (0..RING)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / RING as f64;
                center + e1.scale(radius * a.cos()) + e2.scale(radius * a.sin())
            })
            .collect()
    };
    let push_ring = |pts: Vec<Vec3<f64>>, w: Vec<(usize, f64)>,
                         template: &mut Vec<Vec3<f64>>,
                         weights: &mut Vec<Vec<(usize, f64)>>|
     -> Vec<usize> {
        let start = template.len();
        for p in pts {
            template.push(p);
            weights.push(w.clone());
        }
        (start..template.len()).collect()
    };
    let connect = |a: &[usize], b: &[usize], faces: &mut Vec<[usize; 3]>| {
        for k in 0..RING {
            let k1 = (k + 1) % RING;
            faces.push([a[k], a[k1], b[k]]);
            faces.push([a[k1], b[k1], b[k]]);
        }
    };

    // wrist ring, in the x-z plane around the origin
    let wrist = push_ring(
        ring_at(Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 0.03),
        vec![(0, 1.0)],
        &mut template,
        &mut weights,
    );
    joint_rings[0] = wrist.clone();
    // palm vertices
    for (x, y) in [(0.03, 0.04), (0.0, 0.04), (-0.03, 0.04), (0.015, 0.065), (-0.015, 0.065)] {
        for z in [-0.012, 0.012] {
            template.push(Vec3::new(x, y, z));
            weights.push(vec![(0, 1.0)]);
        }
    }

    let mut tip_ids = [0usize; 5];
    for (fi, (_, _, _, lens, radius)) in fingers.iter().enumerate() {
        let chain = chain_of[fi];
        let d = finger_dir[chain[0]];
        let mut prev: Option<Vec<usize>> = None;
        for s in 0..3 {
            let j = chain[s];
            let parent = parents[j].unwrap();
            let blend = if s == 0 { vec![(j, 1.0)] } else { vec![(parent, 0.5), (j, 0.5)] };
            let ring = push_ring(
                ring_at(joint_pos[j], d, *radius),
                blend,
                &mut template,
                &mut weights,
            );
            joint_rings[j] = ring.clone();
            if let Some(p) = &prev {
                connect(p, &ring, &mut faces);
            }
            let mid = push_ring(
                ring_at(joint_pos[j] + d.scale(0.5 * lens[s]), d, *radius),
                vec![(j, 1.0)],
                &mut template,
                &mut weights,
            );
            connect(&ring, &mid, &mut faces);
            prev = Some(mid);
        }
        let last = chain[2];
        let tip = template.len();
        template.push(tips[fi]);
        weights.push(vec![(last, 1.0)]);
        let p = prev.unwrap();
        for k in 0..RING {
            faces.push([p[k], p[(k + 1) % RING], tip]);
        }
        tip_ids[fi] = tip;
    }

    let nv = template.len();
    let mut skinning_weights = vec![T::zero(); nv * nj];
    for (v, ws) in weights.iter().enumerate() {
        for (j, w) in ws {
            skinning_weights[v * nj + j] = T::lit(*w);
        }
    }
    let mut joint_regressor = vec![T::zero(); nj * nv];
    for (j, ring) in joint_rings.iter().enumerate() {
        for &v in ring {
            joint_regressor[j * nv + v] = T::lit(1.0 / RING as f64);
        }
    }

    // shape bases: uniform scale, finger length, then smooth random fields
    let nb = 10;
    let mut shape_dirs = vec![T::zero(); nv * 3 * nb];
    let fields: Vec<[[f64; 4]; 3]> = (2..nb)
        .map(|_| {
            let mut f = [[0.0; 4]; 3];
            for c in f.iter_mut() {
                *c = [
                    rng.gen_range(-0.004..0.004),
                    rng.gen_range(5.0..40.0),
                    rng.gen_range(5.0..40.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                ];
            }
            f
        })
        .collect();
    for (v, p) in template.iter().enumerate() {
        for c in 0..3 {
            let row = (v * 3 + c) * nb;
            shape_dirs[row] = T::lit(0.08 * p[c]);
            if c == 1 {
                shape_dirs[row + 1] = T::lit(0.1 * p[1].max(0.0));
            }
            for (b, f) in fields.iter().enumerate() {
                let [amp, fx, fy, phase] = f[c];
                shape_dirs[row + 2 + b] = T::lit(amp * (fx * p[0] + fy * p[1] + phase).sin());
            }
        }
    }

    // pose correctives restricted to the joint's own subtree
    let np = 9 * (nj - 1);
    let mut pose_dirs = vec![T::zero(); nv * 3 * np];
    let subtree_of = |root: usize, mut j: usize| loop {
        if j == root {
            return true;
        }
        match parents[j] {
            Some(p) => j = p,
            None => return false,
        }
    };
    for (v, ws) in weights.iter().enumerate() {
        for pj in 1..nj {
            if !ws.iter().any(|(j, _)| subtree_of(pj, *j)) {
                continue;
            }
            for c in 0..3 {
                for e in 0..9 {
                    pose_dirs[(v * 3 + c) * np + (pj - 1) * 9 + e] =
                        T::lit(rng.gen_range(-0.0015..0.0015));
                }
            }
        }
    }

    HandModelAsset::new(AssetParts {
        template_vertices: template.iter().map(|p| p.cast()).collect(),
        shape_dirs,
        pose_dirs,
        joint_regressor,
        skinning_weights,
        parents,
        // tips ordered thumb, index, middle, ring, pinky
        fingertip_vertex_ids: vec![tip_ids[0], tip_ids[1], tip_ids[2], tip_ids[3], tip_ids[4]],
        num_shape: nb,
        faces,
        keypoint_order: MANO_TO_ANNOTATION.to_vec(),
    })
    .expect("synthetic hand rig is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::{pose_hand, HandState};

    #[test]
    fn hand_rig_has_mano_layout() {
        let rig = synthetic_hand_rig::<f64>(0);
        assert_eq!(rig.num_joints(), 16);
        assert_eq!(rig.num_shape(), 10);
        assert_eq!(rig.num_keypoints(), 21);
        assert_eq!(rig.parents()[1], Some(0));
        assert_eq!(rig.parents()[3], Some(2));
        assert_eq!(rig.parents()[13], Some(0));
        // regressed rest joints match the designed joint positions
        let rest = pose_hand(&rig, &HandState::rest(&rig)).unwrap();
        assert!(rest.joints[0].norm() < 1e-12);
        // middle finger base
        assert!((rest.joints[4] - Vec3::new(0.002, 0.09, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn hand_rig_is_seed_deterministic() {
        assert_eq!(synthetic_hand_rig::<f64>(3), synthetic_hand_rig::<f64>(3));
        assert_ne!(synthetic_hand_rig::<f64>(3), synthetic_hand_rig::<f64>(4));
    }
}

/// Bounded box prior over hand states used for synthetic data.
///
/// The global orientation is drawn uniformly in direction with an angle
/// uniform in `[0, global_max_angle]`; every articulated axis-angle
/// component and every shape coefficient is uniform in its symmetric range.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StatePrior {
    pub global_max_angle: f64,
    pub joint_max_component: f64,
    pub beta_max: f64,
}

impl Default for StatePrior {
    fn default() -> Self {
        StatePrior {
            global_max_angle: 0.6,
            joint_max_component: 0.4,
            beta_max: 1.5,
        }
    }
}

impl StatePrior {
    pub fn sample<T: Real, R: Rng>(&self, asset: &HandModelAsset<T>, rng: &mut R) -> HandState<T> {
        let mut theta = Vec::with_capacity(3 * asset.num_joints());
        let axis = loop {
            let v = [rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-3 && n <= 1.0 {
                break v.map(|c| c / n);
            }
        };
        let angle = rng.gen_range(0.0..=self.global_max_angle);
        theta.extend(axis.iter().map(|c| T::lit(c * angle)));
        let m = self.joint_max_component;
        for _ in 3..3 * asset.num_joints() {
            theta.push(T::lit(rng.gen_range(-m..=m)));
        }
        let beta = (0..asset.num_shape())
            .map(|_| T::lit(rng.gen_range(-self.beta_max..=self.beta_max)))
            .collect();
        HandState { theta, beta }
    }
}
