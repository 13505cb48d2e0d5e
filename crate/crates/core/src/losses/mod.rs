//! Training and fitting objective: parameter + 3D joint loss, reprojection
//! loss and the adversarial prior.
//!
//! Reductions:
//!
//! * parameter terms are summed squared differences, `|theta - theta*|^2`
//!   and `|beta - beta*|^2`; when the pose is given as rotation matrices the
//!   pose term is `sum_j |R_j - R*_j|_F^2`;
//! * the 3D joint term sums absolute coordinate differences per joint and
//!   averages over the `K` joints;
//! * the reprojection term is `sum_k w_k (|du_k| + |dv_k|) / #{k : w_k > 0}`;
//! * adversarial terms sum over the `J + 1` discriminators and average over
//!   the batch.
//!
//! The subgradient of `|x|` at `x = 0` is taken as 0.

pub mod discriminator;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project_vjp, project_with_gradients, CameraError, CameraState};
use crate::linalg::{Mat3, Vec3};
use crate::rotation::{rodrigues, rodrigues_vjp, RotationError};
use crate::scalar::Real;

pub use discriminator::{DiscriminatorBank, DiscriminatorKind, Mlp, PriorCotangent, PriorSample};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("ground truth carries no supervision")]
    NoSupervision,
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), LossError> {
    if expected == got {
        Ok(())
    } else {
        Err(LossError::Shape { what, expected, got })
    }
}

/// Supervision for one sample. Keypoints are in annotation order; 2D
/// keypoints live in whatever pixel frame the camera projects to.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthSample<T> {
    pub theta: Option<Vec<T>>,
    pub beta: Option<Vec<T>>,
    pub joints3d: Option<Vec<Vec3<T>>>,
    pub keypoints2d: Option<Vec<[T; 2]>>,
    /// Per-keypoint validity in `[0, 1]`; same length as `keypoints2d`.
    pub keypoint_weights: Option<Vec<T>>,
}

impl<T: Real> GroundTruthSample<T> {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.theta.is_none() && self.beta.is_none() && self.joints3d.is_none() && self.keypoints2d.is_none() {
            return Err(LossError::NoSupervision);
        }
        if let Some(kp) = &self.keypoints2d {
            if let Some(w) = &self.keypoint_weights {
                check("keypoint_weights", kp.len(), w.len())?;
                if w.iter().any(|x| !(*x >= T::zero() && *x <= T::one())) {
                    return Err(LossError::InvalidGroundTruth("keypoint weights must lie in [0, 1]".into()));
                }
            }
        } else if self.keypoint_weights.is_some() {
            return Err(LossError::InvalidGroundTruth("keypoint weights without keypoints".into()));
        }
        Ok(())
    }

    pub fn has_3d(&self) -> bool {
        self.theta.is_some() || self.beta.is_some() || self.joints3d.is_some()
    }

    pub fn has_2d(&self) -> bool {
        self.keypoints2d.is_some() && self.num_valid_2d() > 0
    }

    /// Weight of keypoint `k` (1 when no weights are given).
    pub fn weight(&self, k: usize) -> T {
        self.keypoint_weights.as_ref().map_or(T::one(), |w| w[k])
    }

    pub fn num_valid_2d(&self) -> usize {
        match (&self.keypoints2d, &self.keypoint_weights) {
            (None, _) => 0,
            (Some(kp), None) => kp.len(),
            (Some(_), Some(w)) => w.iter().filter(|x| **x > T::zero()).count(),
        }
    }
}

/// Per-term weights. The 3D loss is
/// `theta*|..|^2 + beta*|..|^2 + joints3d*L1`, and the total is
/// `loss_3d*L3D + loss_2d*L2D + adversarial*Ladv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub theta: f64,
    pub beta: f64,
    pub joints3d: f64,
    pub loss_3d: f64,
    pub loss_2d: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            theta: 1.0,
            beta: 1.0,
            joints3d: 1.0,
            loss_3d: 1.0,
            loss_2d: 1.0,
            adversarial: 1.0,
        }
    }
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `sum_i (a_i - b_i)^2` and its gradient in `a`.
pub fn squared_l2<T: Real>(a: &[T], b: &[T]) -> (T, Vec<T>) {
    let mut v = T::zero();
    let g = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x - *y;
            v += d * d;
            T::lit(2.0) * d
        })
        .collect();
    (v, g)
}

/// `(1/K) sum_k |X_k - X*_k|_1` and its (sub)gradient in `X`.
pub fn joint_l1<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> (T, Vec<Vec3<T>>) {
    let inv_k = T::one() / T::from_usize_lossy(pred.len().max(1));
    let mut v = T::zero();
    let g = pred
        .iter()
        .zip(gt)
        .map(|(p, q)| {
            let d = *p - *q;
            v += d[0].abs() + d[1].abs() + d[2].abs();
            Vec3::new(sign(d[0]), sign(d[1]), sign(d[2])).scale(inv_k)
        })
        .collect();
    (v * inv_k, g)
}

/// Value and gradients of the 3D loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss3d<T> {
    pub value: T,
    pub d_theta: Vec<T>,
    pub d_beta: Vec<T>,
    pub d_joints: Vec<Vec3<T>>,
}

/// Parameter plus 3D joint loss on an axis-angle pose. Absent ground-truth
/// terms contribute nothing; their gradients are zero.
pub fn loss_3d<T: Real>(
    theta: &[T],
    beta: &[T],
    joints: &[Vec3<T>],
    gt: &GroundTruthSample<T>,
    weights: &LossWeights,
) -> Result<Loss3d<T>, LossError> {
    let mut out = Loss3d {
        value: T::zero(),
        d_theta: vec![T::zero(); theta.len()],
        d_beta: vec![T::zero(); beta.len()],
        d_joints: vec![Vec3::zero(); joints.len()],
    };
    if let Some(t) = &gt.theta {
        check("theta", t.len(), theta.len())?;
        let w = T::lit(weights.theta);
        let (v, g) = squared_l2(theta, t);
        out.value += w * v;
        for (o, x) in out.d_theta.iter_mut().zip(g) {
            *o = w * x;
        }
    }
    add_beta_and_joints(beta, joints, gt, weights, &mut out)?;
    Ok(out)
}

fn add_beta_and_joints<T: Real>(
    beta: &[T],
    joints: &[Vec3<T>],
    gt: &GroundTruthSample<T>,
    weights: &LossWeights,
    out: &mut Loss3d<T>,
) -> Result<(), LossError> {
    if let Some(b) = &gt.beta {
        check("beta", b.len(), beta.len())?;
        let w = T::lit(weights.beta);
        let (v, g) = squared_l2(beta, b);
        out.value += w * v;
        for (o, x) in out.d_beta.iter_mut().zip(g) {
            *o = w * x;
        }
    }
    if let Some(x) = &gt.joints3d {
        check("joints3d", x.len(), joints.len())?;
        let w = T::lit(weights.joints3d);
        let (v, g) = joint_l1(joints, x);
        out.value += w * v;
        for (o, d) in out.d_joints.iter_mut().zip(g) {
            *o = d.scale(w);
        }
    }
    Ok(())
}

/// 3D loss with the pose given as local rotation matrices: the pose term
/// is `sum_j |R_j - R*_j|_F^2` with `R*_j` from the ground-truth axis-angle.
/// `Loss3d::d_theta` holds the flattened rotation cotangents (`9 J`).
pub fn loss_3d_rotations<T: Real>(
    rotations: &[Mat3<T>],
    beta: &[T],
    joints: &[Vec3<T>],
    gt: &GroundTruthSample<T>,
    weights: &LossWeights,
) -> Result<Loss3d<T>, LossError> {
    let mut out = Loss3d {
        value: T::zero(),
        d_theta: vec![T::zero(); 9 * rotations.len()],
        d_beta: vec![T::zero(); beta.len()],
        d_joints: vec![Vec3::zero(); joints.len()],
    };
    if let Some(t) = &gt.theta {
        check("theta", 3 * rotations.len(), t.len())?;
        let w = T::lit(weights.theta);
        for (j, r) in rotations.iter().enumerate() {
            let target = rodrigues(&Vec3::from_slice(&t[3 * j..3 * j + 3]))?;
            let (v, g) = squared_l2(&r.to_flat(), &target.to_flat());
            out.value += w * v;
            for (o, x) in out.d_theta[9 * j..9 * j + 9].iter_mut().zip(g) {
                *o = w * x;
            }
        }
    }
    add_beta_and_joints(beta, joints, gt, weights, &mut out)?;
    Ok(out)
}

/// Reprojection loss on pixel coordinates and its gradient.
pub fn loss_2d_pixels<T: Real>(pixels: &[[T; 2]], gt: &GroundTruthSample<T>) -> Result<(T, Vec<[T; 2]>), LossError> {
    let mut grad = vec![[T::zero(); 2]; pixels.len()];
    let Some(target) = &gt.keypoints2d else {
        return Ok((T::zero(), grad));
    };
    check("keypoints2d", target.len(), pixels.len())?;
    let valid = gt.num_valid_2d();
    if valid == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_usize_lossy(valid);
    let mut v = T::zero();
    for (k, (p, q)) in pixels.iter().zip(target).enumerate() {
        let w = gt.weight(k);
        if w <= T::zero() {
            continue;
        }
        let (du, dv) = (p[0] - q[0], p[1] - q[1]);
        v += w * (du.abs() + dv.abs());
        grad[k] = [w * inv * sign(du), w * inv * sign(dv)];
    }
    Ok((v * inv, grad))
}

/// Value and gradients of the reprojection loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss2d<T> {
    pub value: T,
    pub pixels: Vec<[T; 2]>,
    pub d_joints: Vec<Vec3<T>>,
    pub d_translation: Vec3<T>,
}

/// Reprojection loss of 3D joints through `camera`.
pub fn loss_2d<T: Real>(
    joints: &[Vec3<T>],
    camera: &CameraState<T>,
    gt: &GroundTruthSample<T>,
) -> Result<Loss2d<T>, LossError> {
    let (pixels, jac) = project_with_gradients(joints, camera)?;
    let (value, d_pixels) = loss_2d_pixels(&pixels, gt)?;
    let (d_joints, d_translation) = project_vjp(&jac, &d_pixels);
    Ok(Loss2d {
        value,
        pixels,
        d_joints,
        d_translation,
    })
}

/// Generator-side prior `sum_k (D_k - 1)^2` with input cotangents.
/// Discriminator weights are treated as constants.
pub fn adversarial_generator_loss<T: Real>(
    sample: &PriorSample<T>,
    bank: &DiscriminatorBank<T>,
) -> Result<(T, PriorCotangent<T>), LossError> {
    check("rotations", bank.num_joints(), sample.rotations.len())?;
    check("beta", bank.num_shape(), sample.beta.len())?;
    let scores = bank.scores(sample);
    let value = scores.iter().map(|d| (*d - T::one()).powi(2)).sum();
    let d_scores: Vec<T> = scores.iter().map(|d| T::lit(2.0) * (*d - T::one())).collect();
    Ok((value, bank.input_vjp(sample, &d_scores)))
}

/// Generator prior for an axis-angle pose; returns cotangents in
/// `(theta, beta)`.
pub fn adversarial_generator_loss_theta<T: Real>(
    theta: &[T],
    beta: &[T],
    bank: &DiscriminatorBank<T>,
) -> Result<(T, Vec<T>, Vec<T>), LossError> {
    let rotations = theta
        .chunks(3)
        .map(|c| rodrigues(&Vec3::from_slice(c)))
        .collect::<Result<Vec<_>, _>>()?;
    let sample = PriorSample {
        rotations,
        beta: beta.to_vec(),
    };
    let (v, cot) = adversarial_generator_loss(&sample, bank)?;
    let d_theta = theta
        .chunks(3)
        .zip(&cot.rotations)
        .flat_map(|(c, d)| rodrigues_vjp(&Vec3::from_slice(c), d).0)
        .collect();
    Ok((v, d_theta, cot.beta))
}

/// LSGAN discriminator objective
/// `sum_k [ mean_real (D_k - 1)^2 + mean_fake D_k^2 ]`
/// and its gradient in the bank parameters (one buffer per discriminator,
/// in [`DiscriminatorBank::kinds`] order). Inputs receive no gradient.
pub fn adversarial_discriminator_loss<T: Real>(
    real: &[PriorSample<T>],
    fake: &[PriorSample<T>],
    bank: &DiscriminatorBank<T>,
) -> Result<(T, Vec<Vec<T>>), LossError> {
    if real.is_empty() || fake.is_empty() {
        return Err(LossError::InvalidGroundTruth("empty real or fake batch".into()));
    }
    let mut grads = bank.zero_grads();
    let mut value = T::zero();
    for (batch, target) in [(real, T::one()), (fake, T::zero())] {
        let inv = T::one() / T::from_usize_lossy(batch.len());
        for s in batch {
            check("rotations", bank.num_joints(), s.rotations.len())?;
            check("beta", bank.num_shape(), s.beta.len())?;
            for (g, k) in grads.iter_mut().zip(bank.kinds()) {
                let net = bank.get(k);
                let (d, trace) = net.forward(&bank.input(k, s));
                value += (d - target).powi(2) * inv;
                net.backward(&trace, T::lit(2.0) * (d - target) * inv, Some(g));
            }
        }
    }
    Ok((value, grads))
}

/// Pose handed to [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub enum PoseInput<'a, T> {
    /// Axis-angle, `3 J`.
    AxisAngle(&'a [T]),
    /// Local rotation matrices, `J`.
    Rotations(&'a [Mat3<T>]),
}

/// A prediction to score. `joints` are in annotation order.
#[derive(Debug, Clone, Copy)]
pub struct Prediction<'a, T> {
    pub pose: PoseInput<'a, T>,
    pub beta: &'a [T],
    pub joints: &'a [Vec3<T>],
    pub camera: Option<&'a CameraState<T>>,
}

/// Unweighted term values and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms<T> {
    pub loss_3d: T,
    pub loss_2d: T,
    pub adversarial: T,
    pub total: T,
    pub active_3d: bool,
    pub active_2d: bool,
    pub active_adversarial: bool,
}

/// Gradients of the total. For an axis-angle pose `d_pose` has `3 J`
/// entries; for rotations it has `9 J` (row-major per joint).
#[derive(Debug, Clone, PartialEq)]
pub struct TotalGradients<T> {
    pub d_pose: Vec<T>,
    pub d_beta: Vec<T>,
    pub d_joints: Vec<Vec3<T>>,
    pub d_translation: Vec3<T>,
}

/// `w3d L3D + w2d L2D + wadv Ladv`. Terms without supervision (or without a
/// camera, or without a bank) are inactive and contribute exactly zero.
pub fn total_loss<T: Real>(
    pred: &Prediction<'_, T>,
    gt: &GroundTruthSample<T>,
    bank: Option<&DiscriminatorBank<T>>,
    weights: &LossWeights,
) -> Result<(LossTerms<T>, TotalGradients<T>), LossError> {
    gt.validate()?;
    let (pose_len, rotations): (usize, Vec<Mat3<T>>) = match pred.pose {
        PoseInput::AxisAngle(theta) => (
            theta.len(),
            theta
                .chunks(3)
                .map(|c| rodrigues(&Vec3::from_slice(c)))
                .collect::<Result<_, _>>()?,
        ),
        PoseInput::Rotations(r) => (9 * r.len(), r.to_vec()),
    };
    let mut grads = TotalGradients {
        d_pose: vec![T::zero(); pose_len],
        d_beta: vec![T::zero(); pred.beta.len()],
        d_joints: vec![Vec3::zero(); pred.joints.len()],
        d_translation: Vec3::zero(),
    };
    let mut terms = LossTerms {
        loss_3d: T::zero(),
        loss_2d: T::zero(),
        adversarial: T::zero(),
        total: T::zero(),
        active_3d: gt.has_3d(),
        active_2d: gt.has_2d() && pred.camera.is_some(),
        active_adversarial: bank.is_some() && weights.adversarial != 0.0,
    };

    if terms.active_3d {
        let l = match pred.pose {
            PoseInput::AxisAngle(theta) => loss_3d(theta, pred.beta, pred.joints, gt, weights)?,
            PoseInput::Rotations(r) => loss_3d_rotations(r, pred.beta, pred.joints, gt, weights)?,
        };
        let w = T::lit(weights.loss_3d);
        terms.loss_3d = l.value;
        axpy(&mut grads.d_pose, w, &l.d_theta);
        axpy(&mut grads.d_beta, w, &l.d_beta);
        for (o, d) in grads.d_joints.iter_mut().zip(&l.d_joints) {
            *o += d.scale(w);
        }
    }

    if terms.active_2d {
        let l = loss_2d(pred.joints, pred.camera.unwrap(), gt)?;
        let w = T::lit(weights.loss_2d);
        terms.loss_2d = l.value;
        for (o, d) in grads.d_joints.iter_mut().zip(&l.d_joints) {
            *o += d.scale(w);
        }
        grads.d_translation += l.d_translation.scale(w);
    }

    if terms.active_adversarial {
        let bank = bank.unwrap();
        let sample = PriorSample {
            rotations: rotations.clone(),
            beta: pred.beta.to_vec(),
        };
        let (v, cot) = adversarial_generator_loss(&sample, bank)?;
        let w = T::lit(weights.adversarial);
        terms.adversarial = v;
        axpy(&mut grads.d_beta, w, &cot.beta);
        match pred.pose {
            PoseInput::AxisAngle(theta) => {
                for (j, d) in cot.rotations.iter().enumerate() {
                    let g = rodrigues_vjp(&Vec3::from_slice(&theta[3 * j..3 * j + 3]), d);
                    for c in 0..3 {
                        grads.d_pose[3 * j + c] += w * g[c];
                    }
                }
            }
            PoseInput::Rotations(_) => {
                for (j, d) in cot.rotations.iter().enumerate() {
                    axpy(&mut grads.d_pose[9 * j..9 * j + 9], w, &d.to_flat());
                }
            }
        }
    }

    terms.total = T::lit(weights.loss_3d) * terms.loss_3d
        + T::lit(weights.loss_2d) * terms.loss_2d
        + T::lit(weights.adversarial) * terms.adversarial;
    Ok((terms, grads))
}

fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += a * *v;
    }
}
