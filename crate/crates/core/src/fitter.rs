//! Recovers `(theta, beta, t)` from keypoint observations by minimizing
//! [`total_loss`] directly.
//!
//! Two optimizers share the same objective and the same staged schedule
//! (stage 1: translation and global orientation; stage 2: everything):
//!
//! * [`FitMethod::Irls`] (default): damped Gauss-Newton steps on an
//!   iteratively reweighted model of the objective. Absolute-value terms
//!   `c|r|` are replaced by their quadratic majorizer at the current
//!   residual, `c r^2 / (2|r0|)`, so the model gradient equals the true
//!   gradient. A step is kept only if the true objective decreases.
//! * [`FitMethod::GradientDescent`]: diagonally preconditioned gradient
//!   descent with Armijo backtracking.
//!
//! Both keep the best-so-far objective monotone non-increasing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    project, project_with_gradients, CameraError, CameraIntrinsics, CameraState,
};
use crate::hand_model::{pose_hand_with_gradients, HandForward, HandModelAsset, HandModelError, HandState};
use crate::linalg::{solve_spd, Mat3, Vec3};
use crate::losses::{total_loss, DiscriminatorBank, GroundTruthSample, LossError, LossTerms, LossWeights, PoseInput, Prediction, PriorCotangent, PriorSample};
use crate::regressor::Regressor;
use crate::rotation::{axis_angle_from_matrix, rodrigues, rodrigues_vjp};
use crate::scalar::Real;

/// Minimum number of valid 2D keypoints for a fit.
pub const MIN_VALID_KEYPOINTS: usize = 6;

const IRLS_FLOOR_FRACTION: f64 = 0.1;
const ISOTROPIC_DAMPING: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    HandModel(#[from] HandModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("regressor: {0}")]
    Regressor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    #[default]
    Irls,
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSchedule {
    pub method: FitMethod,
    /// Iteration cap of stage 1 (counts toward `max_iters`).
    pub stage1_max_iters: usize,
    pub max_iters: usize,
    /// Converged when the objective drops by less than this fraction over
    /// `window` iterations.
    pub rel_tol: f64,
    pub window: usize,
    /// Converged outright below this objective value.
    pub abs_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub optimize_shape: bool,
    /// 2D weight multiplier of the warm phase that opens stage 2 when 3D
    /// supervision is present; 1 disables the phase.
    pub warm_2d_scale: f64,
    pub warm_max_iters: usize,
    pub weights: LossWeights,
}

impl Default for FitSchedule {
    fn default() -> Self {
        FitSchedule {
            method: FitMethod::Irls,
            stage1_max_iters: 100,
            max_iters: 500,
            rel_tol: 1e-6,
            window: 10,
            abs_tol: 1e-14,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            optimize_shape: true,
            warm_2d_scale: 1e-3,
            warm_max_iters: 150,
            weights: LossWeights::default(),
        }
    }
}

/// What is being fitted: the rig, the observations (annotation keypoint
/// order, pixel frame of `intrinsics`), and an optional frozen prior.
#[derive(Debug, Clone, Copy)]
pub struct FitProblem<'a, T> {
    pub asset: &'a HandModelAsset<T>,
    pub observations: &'a GroundTruthSample<T>,
    pub intrinsics: CameraIntrinsics<T>,
    pub bank: Option<&'a DiscriminatorBank<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub state: HandState<T>,
    pub camera: CameraState<T>,
    pub converged: bool,
    pub iterations: usize,
    pub stage1_iterations: usize,
    /// Best-so-far objective: the initial value, then one entry per
    /// iteration.
    pub trace: Vec<T>,
    pub terms: LossTerms<T>,
}

impl<T> FitResult<T> {
    pub fn final_objective(&self) -> &T {
        self.trace.last().expect("trace is never empty")
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Penalty {
    Squared,
    /// Tagged with its term so reweighting floors stay in one unit.
    Absolute(usize),
}

/// One scalar residual with its cost `c r^2` or `c |r|` and gradient row.
struct Residual<T> {
    value: T,
    cost: T,
    penalty: Penalty,
    row: Vec<T>,
}

impl<'a, T: Real> FitProblem<'a, T> {
    fn nj(&self) -> usize {
        self.asset.num_joints()
    }

    fn nb(&self) -> usize {
        self.asset.num_shape()
    }

    fn num_params(&self) -> usize {
        3 * self.nj() + self.nb() + 3
    }

    fn pack(&self, state: &HandState<T>, camera: &CameraState<T>) -> Vec<T> {
        let mut p = state.theta.clone();
        p.extend_from_slice(&state.beta);
        p.extend_from_slice(&camera.translation.0);
        p
    }

    fn unpack(&self, p: &[T]) -> (HandState<T>, CameraState<T>) {
        let (nj, nb) = (self.nj(), self.nb());
        (
            HandState {
                theta: p[..3 * nj].to_vec(),
                beta: p[3 * nj..3 * nj + nb].to_vec(),
            },
            CameraState {
                translation: Vec3::from_slice(&p[3 * nj + nb..]),
                intrinsics: self.intrinsics,
            },
        )
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let obs = self.observations;
        obs.validate()?;
        let k = self.asset.num_keypoints();
        let kp = obs
            .keypoints2d
            .as_ref()
            .ok_or_else(|| FitError::InvalidInput("2D keypoints are required".into()))?;
        if kp.len() != k {
            return Err(FitError::InvalidInput(format!("expected {k} keypoints, got {}", kp.len())));
        }
        let valid = obs.num_valid_2d();
        if valid < MIN_VALID_KEYPOINTS {
            return Err(FitError::InvalidInput(format!(
                "need at least {MIN_VALID_KEYPOINTS} valid keypoints, got {valid}"
            )));
        }
        if kp
            .iter()
            .enumerate()
            .any(|(i, p)| obs.weight(i) > T::zero() && !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(FitError::InvalidInput("non-finite valid keypoint".into()));
        }
        if let Some(x) = &obs.joints3d {
            if x.len() != k {
                return Err(FitError::InvalidInput(format!("expected {k} 3D joints, got {}", x.len())));
            }
        }
        self.intrinsics.validate()?;
        Ok(())
    }

    /// The exact training objective at `(state, camera)`.
    pub fn objective(&self, state: &HandState<T>, camera: &CameraState<T>, weights: &LossWeights) -> Result<LossTerms<T>, FitError> {
        state.validate(self.asset)?;
        let rots = state
            .theta
            .chunks(3)
            .map(|c| rodrigues(&Vec3::from_slice(c)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(HandModelError::from)?;
        let fwd = HandForward::run(self.asset, &rots, &state.beta)?;
        let joints = self.asset.to_annotation_order(&fwd.joints());
        let pred = Prediction {
            pose: PoseInput::AxisAngle(&state.theta),
            beta: &state.beta,
            joints: &joints,
            camera: Some(camera),
        };
        Ok(total_loss(&pred, self.observations, self.bank, weights)?.0)
    }

    /// Objective at a packed parameter vector; points that put a joint
    /// behind the camera evaluate to infinity.
    fn objective_at(&self, p: &[T], weights: &LossWeights) -> Result<T, FitError> {
        let (s, c) = self.unpack(p);
        match self.objective(&s, &c, weights) {
            Ok(t) => Ok(t.total),
            Err(FitError::Loss(LossError::Camera(CameraError::BehindCamera { .. }))) => Ok(T::infinity()),
            Err(e) => Err(e),
        }
    }

    fn residuals(&self, p: &[T], weights: &LossWeights) -> Result<Vec<Residual<T>>, FitError> {
        let (nj, nb, np) = (self.nj(), self.nb(), self.num_params());
        let (state, camera) = self.unpack(p);
        let obs = self.observations;
        let mut out = Vec::new();
        let w3d = T::lit(weights.loss_3d);
        let unit_row = |i: usize| {
            let mut r = vec![T::zero(); np];
            r[i] = T::one();
            r
        };

        if let Some(t) = &obs.theta {
            for i in 0..3 * nj {
                out.push(Residual {
                    value: state.theta[i] - t[i],
                    cost: w3d * T::lit(weights.theta),
                    penalty: Penalty::Squared,
                    row: unit_row(i),
                });
            }
        }
        if let Some(b) = &obs.beta {
            for i in 0..nb {
                out.push(Residual {
                    value: state.beta[i] - b[i],
                    cost: w3d * T::lit(weights.beta),
                    penalty: Penalty::Squared,
                    row: unit_row(3 * nj + i),
                });
            }
        }

        let needs_joints = obs.joints3d.is_some() || obs.has_2d();
        if needs_joints {
            let grads = pose_hand_with_gradients(self.asset, &state, false)?;
            let order = self.asset.keypoint_order();
            let joints = self.asset.to_annotation_order(&grads.posed.joints);
            // d X_a[i][c] / d params
            let joint_row = |i: usize, c: usize| {
                let src = 3 * order[i] + c;
                let mut r = vec![T::zero(); np];
                r[..3 * nj].copy_from_slice(grads.joints_wrt_theta.row(src));
                r[3 * nj..3 * nj + nb].copy_from_slice(grads.joints_wrt_beta.row(src));
                r
            };
            if let Some(x) = &obs.joints3d {
                let cost = w3d * T::lit(weights.joints3d) / T::from_usize_lossy(x.len());
                for (i, target) in x.iter().enumerate() {
                    for c in 0..3 {
                        out.push(Residual {
                            value: joints[i][c] - target[c],
                            cost,
                            penalty: Penalty::Absolute(0),
                            row: joint_row(i, c),
                        });
                    }
                }
            }
            if obs.has_2d() {
                let kp = obs.keypoints2d.as_ref().unwrap();
                let (pixels, jac) = project_with_gradients(&joints, &camera)?;
                let scale = T::lit(weights.loss_2d) / T::from_usize_lossy(obs.num_valid_2d());
                for i in 0..kp.len() {
                    let w = obs.weight(i);
                    if w <= T::zero() {
                        continue;
                    }
                    let rows = [joint_row(i, 0), joint_row(i, 1), joint_row(i, 2)];
                    for a in 0..2 {
                        let mut row = vec![T::zero(); np];
                        for c in 0..3 {
                            let g = jac[i][a][c];
                            for (o, v) in row.iter_mut().zip(&rows[c]) {
                                *o += g * *v;
                            }
                            row[3 * nj + nb + c] = g;
                        }
                        out.push(Residual {
                            value: pixels[i][a] - kp[i][a],
                            cost: scale * w,
                            penalty: Penalty::Absolute(1),
                            row,
                        });
                    }
                }
            }
        }

        if let Some(bank) = self.bank.filter(|_| weights.adversarial != 0.0) {
            let rotations = state
                .theta
                .chunks(3)
                .map(|c| rodrigues(&Vec3::from_slice(c)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(HandModelError::from)?;
            let sample = PriorSample {
                rotations,
                beta: state.beta.clone(),
            };
            for kind in bank.kinds() {
                let net = bank.get(kind);
                let (d, trace) = net.forward(&bank.input(kind, &sample));
                let dx = net.backward(&trace, T::one(), None);
                let mut cot = PriorCotangent {
                    rotations: vec![Mat3::zero(); nj],
                    beta: vec![T::zero(); nb],
                };
                bank.accumulate_input_cotangent(kind, &dx, &mut cot);
                let mut row = vec![T::zero(); np];
                for j in 0..nj {
                    let g = rodrigues_vjp(&Vec3::from_slice(&state.theta[3 * j..3 * j + 3]), &cot.rotations[j]);
                    row[3 * j..3 * j + 3].copy_from_slice(&g.0);
                }
                row[3 * nj..3 * nj + nb].copy_from_slice(&cot.beta);
                out.push(Residual {
                    value: d - T::one(),
                    cost: T::lit(weights.adversarial),
                    penalty: Penalty::Squared,
                    row,
                });
            }
        }
        Ok(out)
    }

    /// Objective reassembled from residuals; equals [`Self::objective`].
    #[cfg(test)]
    fn residual_objective(res: &[Residual<T>]) -> T {
        res.iter()
            .map(|r| match r.penalty {
                Penalty::Squared => r.cost * r.value * r.value,
                Penalty::Absolute(_) => r.cost * r.value.abs(),
            })
            .sum()
    }

    /// Gradient and reweighted Gauss-Newton matrix over the `active`
    /// parameter indices.
    fn normal_equations(res: &[Residual<T>], active: &[usize]) -> (Vec<T>, Vec<T>) {
        let n = active.len();
        // Floor each |r0| at a fraction of its term's mean absolute
        // residual; a fixed tiny floor freezes residuals that happen to
        // pass near zero.
        let mut floor = [T::zero(); 2];
        let mut count = [0usize; 2];
        for r in res {
            if let Penalty::Absolute(k) = r.penalty {
                floor[k] += r.value.abs();
                count[k] += 1;
            }
        }
        for k in 0..2 {
            floor[k] = (T::lit(IRLS_FLOOR_FRACTION) * floor[k] / T::from_usize_lossy(count[k].max(1))).max(T::lit(1e-12));
        }
        let mut g = vec![T::zero(); n];
        let mut h = vec![T::zero(); n * n];
        let mut sub = vec![T::zero(); n];
        for r in res {
            // model: omega/2 (r + J d)^2
            let omega = match r.penalty {
                Penalty::Squared => T::lit(2.0) * r.cost,
                Penalty::Absolute(k) => r.cost / r.value.abs().max(floor[k]),
            };
            let mut any = false;
            for (s, &i) in sub.iter_mut().zip(active) {
                *s = r.row[i];
                any |= *s != T::zero();
            }
            if !any {
                continue;
            }
            let gr = match r.penalty {
                Penalty::Squared => T::lit(2.0) * r.cost * r.value,
                Penalty::Absolute(_) => r.cost * sign(r.value),
            };
            for a in 0..n {
                if sub[a] == T::zero() {
                    continue;
                }
                g[a] += gr * sub[a];
                let wa = omega * sub[a];
                for b in a..n {
                    h[a * n + b] += wa * sub[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                h[a * n + b] = h[b * n + a];
            }
        }
        (g, h)
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

/// Translation that best explains the observed keypoints for the given
/// state under a weak-perspective approximation. Falls back to a depth of
/// 0.5 m on the optical axis when the fit is degenerate.
pub fn initial_camera<T: Real>(
    asset: &HandModelAsset<T>,
    state: &HandState<T>,
    observations: &GroundTruthSample<T>,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<CameraState<T>, FitError> {
    let fallback = CameraState {
        translation: Vec3::new(T::zero(), T::zero(), T::lit(0.5)),
        intrinsics: *intrinsics,
    };
    let Some(kp) = &observations.keypoints2d else {
        return Ok(fallback);
    };
    let posed = crate::hand_model::pose_hand(asset, state)?;
    let joints = asset.to_annotation_order(&posed.joints);
    if joints.len() != kp.len() {
        return Err(FitError::InvalidInput("keypoint count does not match the rig".into()));
    }
    // unknowns (s, a, b): (u - cx)/fx ~ s X + a, (v - cy)/fy ~ s Y + b
    let mut h = [T::zero(); 9];
    let mut rhs = [T::zero(); 3];
    for (i, (x, p)) in joints.iter().zip(kp).enumerate() {
        let w = observations.weight(i);
        if w <= T::zero() {
            continue;
        }
        let un = (p[0] - intrinsics.cx) / intrinsics.fx;
        let vn = (p[1] - intrinsics.cy) / intrinsics.fy;
        for (coord, obs, col) in [(x[0], un, 1usize), (x[1], vn, 2usize)] {
            let row = [coord, if col == 1 { T::one() } else { T::zero() }, if col == 2 { T::one() } else { T::zero() }];
            for a in 0..3 {
                rhs[a] += w * row[a] * obs;
                for b in 0..3 {
                    h[a * 3 + b] += w * row[a] * row[b];
                }
            }
        }
    }
    let Some(sol) = solve_spd(&h, 3, &rhs) else {
        return Ok(fallback);
    };
    let s = sol[0];
    if !(s > T::zero()) || !s.is_finite() {
        return Ok(fallback);
    }
    let tz = T::one() / s;
    let cam = CameraState {
        translation: Vec3::new(sol[1] * tz, sol[2] * tz, tz),
        intrinsics: *intrinsics,
    };
    if project(&joints, &cam).is_err() {
        return Ok(fallback);
    }
    Ok(cam)
}

fn converged<T: Real>(history: &[T], schedule: &FitSchedule) -> bool {
    let cur = *history.last().unwrap();
    if cur <= T::lit(schedule.abs_tol) {
        return true;
    }
    let n = history.len() - 1;
    if n < schedule.window {
        return false;
    }
    let old = history[n - schedule.window];
    (old - cur) <= T::lit(schedule.rel_tol) * old.abs()
}

struct Phase<'a> {
    active: &'a [usize],
    weights: LossWeights,
    cap: usize,
    first_stage: bool,
}

/// Fits the hand to `problem.observations` starting from the given state
/// and camera.
///
/// Stage 2 is preceded by a warm phase with the 2D weight scaled by
/// `schedule.warm_2d_scale` whenever 3D supervision is present: pixel
/// residuals otherwise dominate the 3D terms far from the solution and
/// trap the pose in reprojection-only minima. The trace always records the
/// best-so-far value of the true objective and the best point is returned.
pub fn fit<T: Real>(
    problem: &FitProblem<'_, T>,
    init_state: &HandState<T>,
    init_camera: &CameraState<T>,
    schedule: &FitSchedule,
) -> Result<FitResult<T>, FitError> {
    problem.validate()?;
    init_state.validate(problem.asset)?;
    let weights = &schedule.weights;
    let mut p = problem.pack(init_state, init_camera);
    let f0 = problem.objective_at(&p, weights)?;
    if !f0.is_finite() {
        return Err(FitError::InvalidInput("initial state projects behind the camera".into()));
    }
    let (nj, nb) = (problem.nj(), problem.nb());
    let stage1: Vec<usize> = (0..3).chain(3 * nj + nb..3 * nj + nb + 3).collect();
    let stage2: Vec<usize> = (0..3 * nj)
        .chain((3 * nj..3 * nj + nb).filter(|_| schedule.optimize_shape))
        .chain(3 * nj + nb..3 * nj + nb + 3)
        .collect();

    let obs = problem.observations;
    let has_3d = obs.theta.is_some() || obs.beta.is_some() || obs.joints3d.is_some();
    let mut phases = vec![Phase {
        active: &stage1,
        weights: *weights,
        cap: schedule.stage1_max_iters,
        first_stage: true,
    }];
    if has_3d && schedule.warm_2d_scale != 1.0 && schedule.warm_max_iters > 0 {
        phases.push(Phase {
            active: &stage2,
            weights: LossWeights {
                loss_2d: weights.loss_2d * schedule.warm_2d_scale,
                ..*weights
            },
            cap: schedule.warm_max_iters,
            first_stage: false,
        });
    }
    phases.push(Phase {
        active: &stage2,
        weights: *weights,
        cap: usize::MAX,
        first_stage: false,
    });

    let mut trace = vec![f0];
    let mut best = p.clone();
    let mut iterations = 0;
    let mut stage1_iterations = 0;
    let mut done = converged(&trace, schedule);
    let last = phases.len() - 1;

    for (k, phase) in phases.iter().enumerate() {
        if done {
            break;
        }
        let exact = phase.weights == *weights;
        let mut f = if exact {
            problem.objective_at(&p, weights)?
        } else {
            problem.objective_at(&p, &phase.weights)?
        };
        let mut history = vec![f];
        let mut state = OptimizerState::new();
        let mut phase_iters = 0;
        while iterations < schedule.max_iters && phase_iters < phase.cap {
            let next = match schedule.method {
                FitMethod::Irls => irls_step(problem, &p, f, phase.active, &phase.weights, &mut state)?,
                FitMethod::GradientDescent => gd_step(problem, &p, f, phase.active, &phase.weights, schedule, &mut state)?,
            };
            if let Some((q, fq)) = next {
                p = q;
                f = fq;
            }
            let f_true = if exact { f } else { problem.objective_at(&p, weights)? };
            let f_best = *trace.last().unwrap();
            if f_true < f_best {
                best.clone_from(&p);
                trace.push(f_true);
            } else {
                trace.push(f_best);
            }
            history.push(f);
            iterations += 1;
            phase_iters += 1;
            if phase.first_stage {
                stage1_iterations += 1;
            }
            if converged(&history, schedule) {
                done = k == last;
                break;
            }
        }
        if iterations >= schedule.max_iters {
            break;
        }
    }

    let (state, camera) = problem.unpack(&best);
    let terms = problem.objective(&state, &camera, weights)?;
    Ok(FitResult {
        state,
        camera,
        converged: done,
        iterations,
        stage1_iterations,
        trace,
        terms,
    })
}

struct OptimizerState {
    lambda: f64,
    step: f64,
}

impl OptimizerState {
    fn new() -> Self {
        OptimizerState { lambda: 1e-3, step: 1.0 }
    }
}

fn irls_step<T: Real>(
    problem: &FitProblem<'_, T>,
    p: &[T],
    f: T,
    active: &[usize],
    weights: &LossWeights,
    st: &mut OptimizerState,
) -> Result<Option<(Vec<T>, T)>, FitError> {
    let res = problem.residuals(p, weights)?;
    let (g, h) = FitProblem::normal_equations(&res, active);
    let n = active.len();
    // a few damping increases per iteration before giving up on it
    // Marquardt scaling plus an isotropic share so directions the data
    // barely constrain (bone twists under joint-only supervision) are still
    // damped.
    let mean_diag = (0..n).map(|a| h[a * n + a]).sum::<T>() / T::from_usize_lossy(n.max(1));
    let iso = mean_diag * T::lit(ISOTROPIC_DAMPING) + T::lit(1e-12);
    for _ in 0..8 {
        let mut damped = h.clone();
        let lambda = T::lit(st.lambda);
        for a in 0..n {
            damped[a * n + a] += lambda * (h[a * n + a] + iso);
        }
        let rhs: Vec<T> = g.iter().map(|x| -*x).collect();
        if let Some(delta) = solve_spd(&damped, n, &rhs) {
            let mut q = p.to_vec();
            for (d, &i) in delta.iter().zip(active) {
                q[i] += *d;
            }
            let fq = problem.objective_at(&q, weights)?;
            if fq < f {
                st.lambda = (st.lambda / 3.0).max(1e-12);
                return Ok(Some((q, fq)));
            }
        }
        st.lambda = (st.lambda * 4.0).min(1e12);
    }
    Ok(None)
}

fn gd_step<T: Real>(
    problem: &FitProblem<'_, T>,
    p: &[T],
    f: T,
    active: &[usize],
    weights: &LossWeights,
    schedule: &FitSchedule,
    st: &mut OptimizerState,
) -> Result<Option<(Vec<T>, T)>, FitError> {
    let res = problem.residuals(p, weights)?;
    let (g, h) = FitProblem::normal_equations(&res, active);
    let n = active.len();
    let dir: Vec<T> = (0..n).map(|a| -g[a] / (h[a * n + a] + T::lit(1e-9))).collect();
    let slope: T = g.iter().zip(&dir).map(|(a, b)| *a * *b).sum();
    if !(slope < T::zero()) {
        return Ok(None);
    }
    let mut alpha = (st.step * 2.0).min(1.0);
    for _ in 0..schedule.max_backtracks {
        let mut q = p.to_vec();
        for (d, &i) in dir.iter().zip(active) {
            q[i] += T::lit(alpha) * *d;
        }
        let fq = problem.objective_at(&q, weights)?;
        if fq <= f + T::lit(schedule.armijo_c * alpha) * slope && fq < f {
            st.step = alpha;
            return Ok(Some((q, fq)));
        }
        alpha *= schedule.backtrack;
    }
    st.step = alpha;
    Ok(None)
}

/// Fitter initialization from one regressor forward pass on `image`
/// (interleaved RGB in `[0, 1]`): local rotations become axis-angle, and the
/// weak-perspective camera becomes a translation for a `crop_size` crop.
pub fn init_from_regressor<T: Real>(
    regressor: &Regressor<T>,
    image: &[T],
    crop_size: T,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<(HandState<T>, CameraState<T>), FitError> {
    let out = regressor
        .forward(image)
        .map_err(|e| FitError::Regressor(e.to_string()))?;
    let translation = out.translation(crop_size, intrinsics)?;
    let theta = out
        .rotations
        .iter()
        .flat_map(|r| axis_angle_from_matrix(r).0)
        .collect();
    Ok((
        HandState { theta, beta: out.beta },
        CameraState {
            translation,
            intrinsics: *intrinsics,
        },
    ))
}

/// Fits many independent problems in parallel. Results keep input order.
pub fn fit_many<T: Real>(
    jobs: &[(FitProblem<'_, T>, HandState<T>, CameraState<T>)],
    schedule: &FitSchedule,
) -> Vec<Result<FitResult<T>, FitError>> {
    jobs.par_iter()
        .map(|(problem, state, camera)| fit(problem, state, camera, schedule))
        .collect()
}

/// Mean Euclidean pixel distance between projected joints and valid
/// observed keypoints.
pub fn mean_reprojection_error<T: Real>(
    asset: &HandModelAsset<T>,
    state: &HandState<T>,
    camera: &CameraState<T>,
    observations: &GroundTruthSample<T>,
) -> Result<T, FitError> {
    let posed = crate::hand_model::pose_hand(asset, state)?;
    let joints = asset.to_annotation_order(&posed.joints);
    let px = project(&joints, camera)?;
    let kp = observations
        .keypoints2d
        .as_ref()
        .ok_or_else(|| FitError::InvalidInput("no 2D keypoints".into()))?;
    let mut sum = T::zero();
    let mut n = 0;
    for (i, (a, b)) in px.iter().zip(kp).enumerate() {
        if observations.weight(i) > T::zero() {
            sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        return Err(FitError::InvalidInput("no valid keypoints".into()));
    }
    Ok(sum / T::from_usize_lossy(n))
}
