//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Each criterion also has a runtime budget.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use handmesh::camera::{project, project_vjp, project_with_gradients, CameraIntrinsics, CameraState};
use handmesh::dataio::annotations::annotations_to_string;
use handmesh::dataio::{
    asset_from_json, asset_to_json, consistency_check, parse_annotations, HandSide, KeypointAnnotation, ParseMode,
};
use handmesh::fitter::{fit_many, initial_camera, mean_reprojection_error, FitProblem, FitSchedule};
use handmesh::hand_model::synthetic::{random_rig, synthetic_hand_rig, RandomRigSpec, StatePrior};
use handmesh::hand_model::{pose_hand, pose_hand_with_gradients, theta_cotangent, HandForward, HandModelAsset, HandState};
use handmesh::keypoints::{KeypointLabel, Split};
use handmesh::linalg::{Mat3, Vec3};
use handmesh::losses::*;
use handmesh::metrics::*;
use handmesh::regressor::train::batch_gradient;
use handmesh::regressor::{Regressor, RegressorConfig, RotationRep, TrainSample};
use handmesh::rotation::{geodesic_distance, rodrigues};
use handmesh_cli::train::{self, Seeds, ToyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let took = start.elapsed();
    let result = result.and_then(|d| {
        if took <= budget {
            Ok(d)
        } else {
            Err(format!("{d}; runtime {:.1}s over the {}s budget", took.as_secs_f64(), budget.as_secs()))
        }
    });
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(e) => ("FAIL", e),
    };
    println!("{tag} [{n}] {name}: {detail} ({:.1}s)", took.as_secs_f64());
    result.is_ok()
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 7] = [
        ("geometry", 10, geometry),
        ("gradients", 120, gradients),
        ("metric oracles", 600, metric_oracles),
        ("loss formulas", 600, loss_formulas),
        ("fitter round trip", 300, fitter_round_trip),
        ("desk-scale training", 1800, desk_training),
        ("dataset tooling", 600, dataset_tooling),
    ];
    let mut failed = 0;
    for (i, (name, secs, f)) in criteria.into_iter().enumerate() {
        failed += !criterion(i + 1, name, Duration::from_secs(secs), f) as usize;
    }
    println!("acceptance: {} of 7 criteria pass", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_spec(rng: &mut impl Rng) -> RandomRigSpec {
    RandomRigSpec {
        num_joints: rng.gen_range(2..7),
        vertices_per_joint: rng.gen_range(2..5),
        num_shape: rng.gen_range(1..5),
        num_fingertips: rng.gen_range(0..4),
        pose_dir_scale: 0.02,
        local_pose_dirs: true,
    }
}

fn random_state(rng: &mut impl Rng, asset: &HandModelAsset<f64>, angle: f64) -> HandState<f64> {
    HandState {
        theta: (0..3 * asset.num_joints()).map(|_| rng.gen_range(-angle..angle)).collect(),
        beta: (0..asset.num_shape()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

// ---------------------------------------------------------------- 1

fn geometry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let rigs: Vec<HandModelAsset<f64>> = (0..10).map(synthetic_hand_rig).collect();
    let (mut rot, mut rest, mut equi, mut sub) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..1000 {
        // Rodrigues over the whole angle range, including tiny angles
        let v = random_vec3(&mut rng, 1.0);
        let angle = if i % 10 == 0 { 1e-9 * rng.gen::<f64>() } else { rng.gen_range(0.0..std::f64::consts::PI) };
        let r = rodrigues(&v.scale(angle / v.norm())).map_err(|e| e.to_string())?;
        let (o, d) = r.orthonormality_error();
        rot = rot.max(o).max(d);

        // rest pose returns the template and the regressed template joints
        let asset = {
            let spec = random_spec(&mut rng);
            random_rig::<f64, _>(&mut rng, spec)
        };
        let posed = pose_hand(&asset, &HandState::rest(&asset)).unwrap();
        rest = rest.max(max_abs_diff(&posed.vertices, asset.template_vertices()));
        for j in 0..asset.num_joints() {
            let mut x = [0.0; 3];
            for (v, p) in asset.template_vertices().iter().enumerate() {
                for c in 0..3 {
                    x[c] += asset.regressor_weight(j, v) * p[c];
                }
            }
            rest = rest.max(max_abs_diff(&posed.joints[j..j + 1], &[Vec3(x)]));
        }

        // global orientation rotates the whole hand rigidly about the root
        let hand = &rigs[i % rigs.len()];
        let mut state = random_state(&mut rng, hand, 0.6);
        state.theta[..3].copy_from_slice(&[0.0; 3]);
        let base = pose_hand(hand, &state).unwrap();
        let g = random_vec3(&mut rng, 1.5);
        state.theta[..3].copy_from_slice(&g.0);
        let moved = pose_hand(hand, &state).unwrap();
        let rg = Mat3(quat_rotation(&g.0));
        let root = base.joints[0];
        for (m, b) in moved.vertices.iter().zip(&base.vertices).chain(moved.joints.iter().zip(&base.joints)) {
            equi = equi.max((*m - (root + rg.mul_vec(&(*b - root)))).norm());
        }

        // distances among vertices outside a changed subtree are preserved
        let nj = asset.num_joints();
        let j = rng.gen_range(1..nj);
        let subtree = asset.subtree(j);
        let outside: Vec<usize> = (0..asset.num_vertices())
            .filter(|&v| subtree.iter().all(|&k| asset.skinning_weight(v, k) == 0.0))
            .collect();
        let s0 = random_state(&mut rng, &asset, 1.0);
        let mut s1 = s0.clone();
        for c in 0..3 {
            s1.theta[3 * j + c] += rng.gen_range(-1.0..1.0);
        }
        let (a, b) = (pose_hand(&asset, &s0).unwrap(), pose_hand(&asset, &s1).unwrap());
        for &p in &outside {
            for &q in &outside {
                let da = (a.vertices[p] - a.vertices[q]).norm();
                let db = (b.vertices[p] - b.vertices[q]).norm();
                sub = sub.max((da - db).abs());
            }
        }
    }
    ensure!(rot < 1e-9, "Rodrigues orthonormality/determinant error {rot:.2e}");
    ensure!(rest < 1e-9, "rest pose deviates from the template by {rest:.2e}");
    ensure!(equi < 1e-8, "rigid equivariance error {equi:.2e}");
    ensure!(sub < 1e-8, "subtree distance change {sub:.2e}");
    Ok(format!(
        "1000 samples; rotation {rot:.1e}, rest {rest:.1e}, equivariance {equi:.1e}, subtree {sub:.1e}"
    ))
}

// ---------------------------------------------------------------- 2

fn gradients() -> Check {
    let h = hand_model_gradients()?;
    let c = camera_gradients()?;
    let l = loss_gradients()?;
    let e = end_to_end_gradients()?;
    ensure!(h < 1e-4 && c < 1e-4 && l < 1e-4, "core worst relative error {:.2e}", h.max(c).max(l));
    ensure!(e < 1e-3, "end-to-end worst relative error {e:.2e}");
    Ok(format!(
        "100 configurations each; worst relative error hand model {h:.1e}, camera {c:.1e}, losses {l:.1e}, end-to-end {e:.1e}"
    ))
}

fn hand_model_gradients() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let asset = if i % 20 == 0 {
            synthetic_hand_rig::<f64>(i)
        } else {
            {
            let spec = random_spec(&mut rng);
            random_rig::<f64, _>(&mut rng, spec)
        }
        };
        let state = random_state(&mut rng, &asset, if i % 4 == 0 { 1e-4 } else { 1.5 });
        let grads = pose_hand_with_gradients(&asset, &state, true).map_err(|e| e.to_string())?;
        let nt = state.theta.len();
        let mut x = state.theta.clone();
        x.extend(&state.beta);
        let eval = |x: &[f64], verts: bool| {
            let s = HandState {
                theta: x[..nt].to_vec(),
                beta: x[nt..].to_vec(),
            };
            let posed = pose_hand(&asset, &s).unwrap();
            let pts = if verts { posed.vertices } else { posed.joints };
            pts.iter().flat_map(|p| p.0).collect::<Vec<f64>>()
        };
        let fd_j = central_jacobian(&x, 1e-5, |x| eval(x, false));
        let fd_v = central_jacobian(&x, 1e-5, |x| eval(x, true));
        for k in 0..x.len() {
            let (aj, av) = if k < nt {
                (grads.joints_wrt_theta.column(k), grads.vertices_wrt_theta.as_ref().unwrap().column(k))
            } else {
                (
                    grads.joints_wrt_beta.column(k - nt),
                    grads.vertices_wrt_beta.as_ref().unwrap().column(k - nt),
                )
            };
            worst = worst.max(relative_error(&aj, &fd_j[k], 1e-7));
            worst = worst.max(relative_error(&av, &fd_v[k], 1e-7));
        }
    }
    Ok(worst)
}

fn camera_gradients() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = rng.gen_range(200.0..6000.0);
        let cam = CameraState {
            translation: Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(0.5..5.0)),
            intrinsics: CameraIntrinsics::new(f, f * rng.gen_range(0.9..1.1), 120.0, 130.0, 640.0, 480.0).unwrap(),
        };
        let pts: Vec<Vec3<f64>> = (0..6).map(|_| random_vec3(&mut rng, 0.15)).collect();
        let (_, jac) = project_with_gradients(&pts, &cam).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = pts.iter().flat_map(|p| p.0).collect();
        let fd = central_jacobian(&flat, 1e-5, |x| {
            let p: Vec<Vec3<f64>> = x.chunks(3).map(Vec3::from_slice).collect();
            project(&p, &cam).unwrap().iter().flat_map(|q| *q).collect()
        });
        for (i, col) in fd.iter().enumerate() {
            let (pt, coord) = (i / 3, i % 3);
            let mut analytic = vec![0.0; 2 * pts.len()];
            analytic[2 * pt] = jac[pt][0][coord];
            analytic[2 * pt + 1] = jac[pt][1][coord];
            worst = worst.max(relative_error(&analytic, col, 1e-7));
        }
        let g: Vec<[f64; 2]> = (0..pts.len()).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let (_, d_t) = project_vjp(&jac, &g);
        let fd_t: Vec<f64> = central_jacobian(&cam.translation.0, 1e-5, |t| {
            let c = CameraState {
                translation: Vec3::from_slice(t),
                ..cam
            };
            vec![project(&pts, &c).unwrap().iter().zip(&g).map(|(p, w)| p[0] * w[0] + p[1] * w[1]).sum()]
        })
        .into_iter()
        .map(|c| c[0])
        .collect();
        worst = worst.max(relative_error(&d_t.0, &fd_t, 1e-7));
    }
    Ok(worst)
}

const J: usize = 16;
const B: usize = 10;
const K: usize = 21;

fn rand_vec(rng: &mut impl Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}

fn loss_camera() -> CameraState<f64> {
    CameraState {
        translation: Vec3::new(0.01, -0.02, 0.6),
        intrinsics: CameraIntrinsics::default_for_crop(256.0),
    }
}

fn full_gt(rng: &mut impl Rng) -> GroundTruthSample<f64> {
    let x: Vec<Vec3<f64>> = (0..K).map(|_| random_vec3(rng, 0.1)).collect();
    let kp = project(&x, &loss_camera())
        .unwrap()
        .into_iter()
        .map(|p| [p[0] + rng.gen_range(-20.0..20.0), p[1] + rng.gen_range(-20.0..20.0)])
        .collect();
    GroundTruthSample {
        theta: Some(rand_vec(rng, 3 * J, 0.5)),
        beta: Some(rand_vec(rng, B, 1.0)),
        joints3d: Some((0..K).map(|_| random_vec3(rng, 0.1)).collect()),
        keypoints2d: Some(kp),
        keypoint_weights: Some((0..K).map(|i| if i % 5 == 0 { 0.0 } else { rng.gen_range(0.2..1.0) }).collect()),
    }
}

/// Total loss and its gradient in (theta, beta, t), through the rig.
fn total_through_rig(
    asset: &HandModelAsset<f64>,
    params: &[f64],
    gt: &GroundTruthSample<f64>,
    bank: &DiscriminatorBank<f64>,
) -> (f64, Vec<f64>) {
    let (theta, rest) = params.split_at(3 * J);
    let (beta, t) = rest.split_at(B);
    let rots: Vec<Mat3<f64>> = theta.chunks(3).map(|c| rodrigues(&Vec3::from_slice(c)).unwrap()).collect();
    let fwd = HandForward::run(asset, &rots, beta).unwrap();
    let joints = asset.to_annotation_order(&fwd.joints());
    let cam = CameraState {
        translation: Vec3::from_slice(t),
        ..loss_camera()
    };
    let pred = Prediction {
        pose: PoseInput::AxisAngle(theta),
        beta,
        joints: &joints,
        camera: Some(&cam),
    };
    let (terms, g) = total_loss(&pred, gt, Some(bank), &LossWeights::default()).unwrap();
    let cot = fwd.vjp(&[], &asset.from_annotation_order(&g.d_joints)).unwrap();
    let mut grad = theta_cotangent(theta, &cot.rotations);
    for (a, b) in grad.iter_mut().zip(&g.d_pose) {
        *a += *b;
    }
    grad.extend(cot.beta.iter().zip(&g.d_beta).map(|(a, b)| a + b));
    grad.extend_from_slice(&g.d_translation.0);
    (terms.total, grad)
}

fn loss_gradients() -> Result<f64, String> {
    let asset = synthetic_hand_rig::<f64>(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let mut gt = full_gt(&mut rng);
        if case % 3 == 1 {
            gt.joints3d = None;
            gt.theta = None;
        }
        let bank = DiscriminatorBank::new(J, B, 8, &mut rng);
        let mut params = rand_vec(&mut rng, 3 * J, 0.4);
        params.extend(rand_vec(&mut rng, B, 1.0));
        params.extend([0.0, 0.0, 0.6]);
        let (_, grad) = total_through_rig(&asset, &params, &gt, &bank);
        let dir = rand_vec(&mut rng, params.len(), 1.0);
        let h = 1e-5;
        let at = |s: f64| -> f64 {
            let p: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + s * d).collect();
            total_through_rig(&asset, &p, &gt, &bank).0
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        worst = worst.max(relative_error(&[analytic], &[fd], 1e-7));
    }
    Ok(worst)
}

fn end_to_end_gradients() -> Result<f64, String> {
    let asset = synthetic_hand_rig::<f64>(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let size = [16, 32][trial % 2];
        let cfg = RegressorConfig {
            input_size: size,
            patch_size: [4, 8, 16][rng.gen_range(0..3)].min(size),
            embed_dim: [8, 16][rng.gen_range(0..2)],
            depth: rng.gen_range(0..3),
            num_heads: [1, 2, 4][rng.gen_range(0..3)],
            decoder_depth: rng.gen_range(1..3),
            rotation: if rng.gen_bool(0.5) { RotationRep::SixD } else { RotationRep::AxisAngle },
            ..RegressorConfig::tiny()
        };
        let mut m = Regressor::<f64>::new(cfg, trial as u64).map_err(|e| e.to_string())?;
        // move off the zero-initialized heads so every path carries gradient
        for t in m.params_mut() {
            t.data.iter_mut().for_each(|x| *x += 0.05 * (rng.gen::<f64>() - 0.5) * 3.46);
        }
        let bank = DiscriminatorBank::<f64>::new(J, B, 8, &mut rng);
        let synth = handmesh::dataio::SynthConfig {
            image_size: size,
            ..Default::default()
        };
        let batch: Vec<TrainSample<f64>> = handmesh::dataio::synthesize_dataset(&asset, 2, trial as u64, &synth)
            .iter()
            .map(|s| TrainSample::from_synthetic(s).unwrap())
            .collect();
        let w = LossWeights::default();
        let loss = |m: &Regressor<f64>| batch_gradient(m, &asset, &batch, Some(&bank), &w).unwrap().total;
        let g = batch_gradient(&m, &asset, &batch, Some(&bank), &w).map_err(|e| e.to_string())?.grads;
        let dir: Vec<Vec<f64>> = g.iter().map(|t| t.data.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let analytic: f64 = g.iter().zip(&dir).flat_map(|(t, d)| t.data.iter().zip(d)).map(|(a, b)| a * b).sum();
        let h = 1e-6;
        let shifted = |sign: f64| {
            let mut q = m.clone();
            for (t, d) in q.params_mut().iter_mut().zip(&dir) {
                t.data.iter_mut().zip(d).for_each(|(x, y)| *x += sign * h * y);
            }
            loss(&q)
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
        worst = worst.max(relative_error(&[analytic], &[fd], 1e-9));
    }
    Ok(worst)
}

// ---------------------------------------------------------------- 3

fn random_similarity(rng: &mut impl Rng) -> SimilarityTransform<f64> {
    SimilarityTransform {
        scale: rng.gen_range(0.2..5.0),
        rotation: random_rotation(rng),
        translation: random_vec3(rng, 1.0),
    }
}

fn residual(tf: &SimilarityTransform<f64>, src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> f64 {
    src.iter().zip(dst).map(|(s, d)| (tf.apply(s) - *d).norm_squared()).sum()
}

fn label(u: f64, v: f64, exists: bool, occluded: bool) -> KeypointLabel<f64> {
    KeypointLabel { u, v, exists, occluded }
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);

    // Procrustes against a 10^4-candidate search, half global, half local
    let instances = 20;
    for inst in 0..instances {
        let src: Vec<Vec3<f64>> = (0..21).map(|_| random_vec3(&mut rng, 0.1)).collect();
        let dst: Vec<Vec3<f64>> = random_similarity(&mut rng)
            .apply_all(&src)
            .into_iter()
            .map(|p| p + random_vec3(&mut rng, 0.01))
            .collect();
        let best = procrustes_align(&src, &dst).map_err(|e| e.to_string())?;
        let r_best = residual(&best, &src, &dst);
        for i in 0..10_000 {
            let cand = if i % 2 == 0 {
                random_similarity(&mut rng)
            } else {
                let step = 10f64.powf(rng.gen_range(-6.0..-1.0));
                SimilarityTransform {
                    scale: best.scale * (1.0 + rng.gen_range(-step..step)),
                    rotation: Mat3(quat_rotation(&random_vec3(&mut rng, step).0)).mul_mat(&best.rotation),
                    translation: best.translation + random_vec3(&mut rng, step),
                }
            };
            ensure!(
                residual(&cand, &src, &dst) >= r_best - 1e-12,
                "instance {inst}: candidate {i} beats the closed form"
            );
        }
    }

    // similarity invariance
    let mut inv: f64 = 0.0;
    for _ in 0..500 {
        let gt: Vec<Vec3<f64>> = (0..21).map(|_| random_vec3(&mut rng, 0.1)).collect();
        let pred: Vec<_> = gt.iter().map(|p| *p + random_vec3(&mut rng, 0.01)).collect();
        let base = pa_mpjpe(&pred, &gt).unwrap();
        let moved = random_similarity(&mut rng).apply_all(&pred);
        inv = inv.max((pa_mpjpe(&moved, &gt).unwrap() - base).abs());
    }
    ensure!(inv < 1e-9, "PA-MPJPE changes by {inv:.2e} under a similarity");

    // AUC of uniform errors
    let errors: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..50.0)).collect();
    let a = auc(&errors, 50.0, 100).unwrap();
    ensure!((a - 0.5).abs() <= 0.01, "AUC of uniform errors is {a}");

    // monotonicity in the threshold
    for _ in 0..500 {
        let gt: Vec<_> = (0..21)
            .map(|_| label(rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0), rng.gen_bool(0.9), rng.gen_bool(0.3)))
            .collect();
        let pred: Vec<[f64; 2]> = gt.iter().map(|k| [k.u + rng.gen_range(-30.0..30.0), k.v + rng.gen_range(-30.0..30.0)]).collect();
        let (t1, t2): (f64, f64) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        for s in Split::ALL {
            if let (Ok(a), Ok(b)) = (pck(&pred, &gt, lo, s).unwrap(), pck(&pred, &gt, hi, s).unwrap()) {
                ensure!(a.correct <= b.correct, "PCK decreases from {lo} to {hi}");
            }
        }
        let cloud: Vec<Vec3<f64>> = (0..40).map(|_| random_vec3(&mut rng, 0.1)).collect();
        let noisy: Vec<_> = cloud.iter().map(|p| *p + random_vec3(&mut rng, 0.02)).collect();
        let (f1, f2): (f64, f64) = (rng.gen_range(0.1..30.0), rng.gen_range(0.1..30.0));
        ensure!(
            f_score(&noisy, &cloud, f1.min(f2)).unwrap() <= f_score(&noisy, &cloud, f1.max(f2)).unwrap(),
            "F-score decreases in the threshold"
        );
    }

    // hand-enumerated PCK: 21 keypoints on a 100 x 80 box, offsets of
    // 4, 7 and 12 px cycling, occluded exactly at the 4 px offsets
    let gt: Vec<_> = (0..21)
        .map(|i| label(100.0 * (i % 5) as f64 / 4.0, 80.0 * (i / 5) as f64 / 4.0, true, i % 3 == 0))
        .collect();
    let offsets = [4.0, 7.0, 12.0];
    let pred: Vec<[f64; 2]> = gt.iter().enumerate().map(|(i, k)| [k.u + offsets[i % 3], k.v]).collect();
    let expect = [
        (Split::All, 0.05, 7, 21),
        (Split::All, 0.1, 14, 21),
        (Split::All, 0.15, 21, 21),
        (Split::Occluded, 0.05, 7, 7),
        (Split::Visible, 0.05, 0, 14),
        (Split::Visible, 0.1, 7, 14),
    ];
    for (split, t, correct, evaluated) in expect {
        let got = pck(&pred, &gt, t, split).unwrap().unwrap();
        ensure!(
            got == PckCount { correct, evaluated },
            "PCK {split} @{t}: {got:?}, expected {correct}/{evaluated}"
        );
    }
    Ok(format!(
        "Procrustes unbeaten on {instances} x 10^4 candidates; invariance {inv:.1e}; uniform AUC {a:.4}; monotone on 500 cases; enumerated PCK exact"
    ))
}

// ---------------------------------------------------------------- 4

fn oracle_3d(theta: &[f64], beta: &[f64], x: &[Vec3<f64>], gt: &GroundTruthSample<f64>) -> f64 {
    let mut total = 0.0;
    if let Some(t) = &gt.theta {
        for i in 0..t.len() {
            total += (theta[i] - t[i]).powi(2);
        }
    }
    if let Some(b) = &gt.beta {
        for i in 0..b.len() {
            total += (beta[i] - b[i]).powi(2);
        }
    }
    if let Some(xs) = &gt.joints3d {
        let mut s = 0.0;
        for k in 0..xs.len() {
            for c in 0..3 {
                s += (x[k][c] - xs[k][c]).abs();
            }
        }
        total += s / xs.len() as f64;
    }
    total
}

fn oracle_2d(px: &[[f64; 2]], gt: &GroundTruthSample<f64>) -> f64 {
    let kp = gt.keypoints2d.as_ref().unwrap();
    let (mut s, mut n) = (0.0, 0);
    for k in 0..kp.len() {
        let w = gt.keypoint_weights.as_ref().map_or(1.0, |w| w[k]);
        if w > 0.0 {
            n += 1;
            s += w * ((px[k][0] - kp[k][0]).abs() + (px[k][1] - kp[k][1]).abs());
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn oracle_adv(bank: &DiscriminatorBank<f64>, s: &PriorSample<f64>) -> f64 {
    let mut total = (bank.shape.score(&s.beta) - 1.0).powi(2);
    let mut pose = Vec::new();
    for j in 1..J {
        pose.extend_from_slice(&s.rotations[j].to_flat());
        total += (bank.joints[j - 1].score(&s.rotations[j].to_flat()) - 1.0).powi(2);
    }
    total + (bank.pose.score(&pose) - 1.0).powi(2)
}

fn random_prior(rng: &mut impl Rng) -> PriorSample<f64> {
    PriorSample {
        rotations: (0..J).map(|_| random_rotation(rng)).collect(),
        beta: rand_vec(rng, B, 1.0),
    }
}

fn loss_formulas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let w = LossWeights::default();
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let mut gt = full_gt(&mut rng);
        // drop random groups to cover every masking combination
        if rng.gen_bool(0.3) {
            gt.theta = None;
        }
        if rng.gen_bool(0.3) {
            gt.beta = None;
        }
        if rng.gen_bool(0.3) {
            gt.joints3d = None;
        }
        let theta = rand_vec(&mut rng, 3 * J, 0.5);
        let beta = rand_vec(&mut rng, B, 1.0);
        let x: Vec<Vec3<f64>> = (0..K).map(|_| random_vec3(&mut rng, 0.1)).collect();
        if gt.theta.is_some() || gt.beta.is_some() || gt.joints3d.is_some() {
            let l = loss_3d(&theta, &beta, &x, &gt, &w).map_err(|e| e.to_string())?;
            worst = worst.max((l.value - oracle_3d(&theta, &beta, &x, &gt)).abs());
        }
        let px: Vec<[f64; 2]> = (0..K).map(|_| [rng.gen_range(0.0..256.0), rng.gen_range(0.0..256.0)]).collect();
        worst = worst.max((loss_2d_pixels(&px, &gt).unwrap().0 - oracle_2d(&px, &gt)).abs());
        let bank = DiscriminatorBank::new(J, B, 8, &mut rng);
        let s = random_prior(&mut rng);
        worst = worst.max((adversarial_generator_loss(&s, &bank).unwrap().0 - oracle_adv(&bank, &s)).abs());
    }
    ensure!(worst < 1e-9, "largest deviation from the loop oracles {worst:.2e}");

    // zero at fixed points
    let gt = full_gt(&mut rng);
    let (theta, beta, x) = (gt.theta.clone().unwrap(), gt.beta.clone().unwrap(), gt.joints3d.clone().unwrap());
    ensure!(loss_3d(&theta, &beta, &x, &gt, &w).unwrap().value == 0.0, "3D loss not zero at the ground truth");
    let (v, g) = loss_2d_pixels(gt.keypoints2d.as_ref().unwrap(), &gt).unwrap();
    ensure!(v == 0.0 && g.iter().all(|p| p == &[0.0, 0.0]), "2D loss not zero at the ground truth");
    let ones = DiscriminatorBank::<f64>::constant(J, B, 4, 1.0);
    ensure!(
        adversarial_generator_loss(&random_prior(&mut rng), &ones).unwrap().0 == 0.0,
        "adversarial loss not zero when every score is 1"
    );

    // masking: zero-weight keypoints and absent groups are exact no-ops
    for _ in 0..100 {
        let gt = full_gt(&mut rng);
        let mut px: Vec<[f64; 2]> = (0..K).map(|_| [rng.gen_range(0.0..256.0), rng.gen_range(0.0..256.0)]).collect();
        let (v0, g0) = loss_2d_pixels(&px, &gt).unwrap();
        for k in (0..K).step_by(5) {
            px[k] = [rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3)];
        }
        let (v1, g1) = loss_2d_pixels(&px, &gt).unwrap();
        ensure!(v0 == v1, "a zero-weight keypoint changed the 2D loss");
        ensure!((0..K).step_by(5).all(|k| g1[k] == [0.0, 0.0]) && g0.len() == g1.len(), "masked keypoint has gradient");

        let cam = loss_camera();
        let pred = Prediction {
            pose: PoseInput::AxisAngle(&theta),
            beta: &beta,
            joints: &x,
            camera: Some(&cam),
        };
        let only_2d = GroundTruthSample {
            keypoints2d: gt.keypoints2d.clone(),
            keypoint_weights: gt.keypoint_weights.clone(),
            ..Default::default()
        };
        let (t2, grads) = total_loss(&pred, &only_2d, None, &w).unwrap();
        ensure!(t2.total == w.loss_2d * loss_2d(&x, &cam, &gt).unwrap().value, "2D-only total differs from its term");
        ensure!(
            grads.d_pose.iter().all(|g| *g == 0.0) && grads.d_beta.iter().all(|g| *g == 0.0),
            "absent 3D supervision produced pose or shape gradient"
        );
    }
    Ok(format!("500 random inputs within {worst:.1e} of the loop oracles; fixed points zero; masking exact"))
}

// ---------------------------------------------------------------- 5

type FitJob<'a> = (FitProblem<'a, f64>, HandState<f64>, CameraState<f64>);

/// Rest-pose starts with the closed-form camera guess.
fn fit_jobs<'a>(asset: &'a HandModelAsset<f64>, obs: &'a [GroundTruthSample<f64>], k: CameraIntrinsics<f64>) -> Vec<FitJob<'a>> {
    obs.iter()
        .map(|o| {
            let s = HandState::rest(asset);
            let c = initial_camera(asset, &s, o, &k).unwrap();
            let problem = FitProblem {
                asset,
                observations: o,
                intrinsics: k,
                bank: None,
            };
            (problem, s, c)
        })
        .collect()
}

fn fitter_round_trip() -> Check {
    let asset = synthetic_hand_rig::<f64>(0);
    let k = CameraIntrinsics::default_for_crop(256.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let mut truths = Vec::new();
    for _ in 0..50 {
        let state = StatePrior::default().sample(&asset, &mut rng);
        let camera = CameraState {
            translation: Vec3::new(rng.gen_range(-0.03..0.03), rng.gen_range(-0.11..-0.05), rng.gen_range(5.0..7.0)),
            intrinsics: k,
        };
        let joints = asset.to_annotation_order(&pose_hand(&asset, &state).unwrap().joints);
        let pixels = project(&joints, &camera).unwrap();
        truths.push((state, joints, pixels));
    }
    let full: Vec<GroundTruthSample<f64>> = truths
        .iter()
        .map(|(s, j, p)| GroundTruthSample {
            theta: Some(s.theta.clone()),
            beta: Some(s.beta.clone()),
            joints3d: Some(j.clone()),
            keypoints2d: Some(p.clone()),
            keypoint_weights: None,
        })
        .collect();
    let only_2d: Vec<GroundTruthSample<f64>> = truths
        .iter()
        .map(|(_, _, p)| GroundTruthSample {
            keypoints2d: Some(p.clone()),
            ..Default::default()
        })
        .collect();
    let schedule = FitSchedule::default();
    let (mut pa, mut geo, mut reproj, mut converged) = (0.0f64, 0.0f64, 0.0f64, 0);
    for (r, (truth, _)) in fit_many(&fit_jobs(&asset, &full, k), &schedule).into_iter().zip(truths.iter().zip(&full)) {
        let r = r.map_err(|e| e.to_string())?;
        converged += r.converged as usize;
        let joints = asset.to_annotation_order(&pose_hand(&asset, &r.state).unwrap().joints);
        pa = pa.max(pa_mpjpe(&joints, &truth.1).unwrap());
        for (a, b) in r.state.theta.chunks(3).zip(truth.0.theta.chunks(3)) {
            geo = geo.max(geodesic_distance(
                &rodrigues(&Vec3::from_slice(a)).unwrap(),
                &rodrigues(&Vec3::from_slice(b)).unwrap(),
            ));
        }
    }
    for (r, obs) in fit_many(&fit_jobs(&asset, &only_2d, k), &schedule).into_iter().zip(&only_2d) {
        let r = r.map_err(|e| e.to_string())?;
        converged += r.converged as usize;
        reproj = reproj.max(mean_reprojection_error(&asset, &r.state, &r.camera, obs).unwrap());
    }
    ensure!(pa < 1.0, "worst PA-MPJPE with 3D supervision {pa:.3e} mm");
    ensure!(geo < 1e-3, "worst geodesic joint error {geo:.3e} rad");
    ensure!(reproj < 0.5, "worst 2D-only reprojection error {reproj:.3} px");
    ensure!(converged == 100, "{converged}/100 fits converged");
    Ok(format!(
        "50 + 50 fits, 100/100 converged; worst PA-MPJPE {pa:.1e} mm, geodesic {geo:.1e} rad, reprojection {reproj:.1e} px"
    ))
}

// ---------------------------------------------------------------- 6

fn desk_training() -> Check {
    let asset = synthetic_hand_rig::<f64>(0);
    let cfg = ToyConfig {
        steps: 2000,
        batch_size: 8,
        test_samples: 0,
        ..ToyConfig::default()
    };
    let seeds = Seeds::new(0);
    let data = train::synthetic(&asset, 8, seeds.train_data, &cfg.synth);
    let (_, overfit) = train::train_one("overfit", &RegressorConfig::desk(), &cfg, &asset, &data, &[], seeds, |_| {})
        .map_err(|e| format!("{e:#}"))?;
    let px = overfit.train_reprojection_px;

    let sweep_cfg = ToyConfig {
        steps: 1500,
        batch_size: 16,
        test_samples: 128,
        ..ToyConfig::default()
    };
    let report = train::sweep(&sweep_cfg, &asset, 0).map_err(|e| format!("{e:#}"))?;
    let cells = report
        .runs()
        .iter()
        .map(|r| format!("{} {:.2}", r.name, r.heldout_reprojection_px))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(px < 1.0, "overfit reprojection {px:.3} px after 2000 steps");
    ensure!(report.both_strictly_best(), "held-out px: {cells}; large data + large model is not strictly best");
    Ok(format!("overfit 8 samples to {px:.3} px in 2000 steps; held-out px: {cells}"))
}

// ---------------------------------------------------------------- 7

fn hand(id: &str, pts: impl FnMut(usize) -> KeypointLabel<f64>) -> KeypointAnnotation {
    KeypointAnnotation::new(id, HandSide::Right, (0..21).map(pts).collect())
}

fn dataset_tooling() -> Check {
    // Crafted pair. Hand "a": palm 60 px (wrist (0,0), middle MCP (0,60)),
    // tolerance 0.25 * 60 = 15 px. In b: keypoint 20 missing (existence
    // 20/21), keypoints 1 and 2 flip to occluded (occlusion 18/20), and of
    // the 18 keypoints visible in both, 3, 4 and 5 move 20 px while 6
    // moves 14 px (offset 15/18).
    let base = |k: usize| label(if k == 9 { 0.0 } else { 10.0 * k as f64 }, if k == 9 { 60.0 } else { 0.0 }, true, false);
    let a1 = hand("a", base);
    let b1 = hand("a", |k| {
        let mut l = base(k);
        match k {
            20 => l.exists = false,
            1 | 2 => l.occluded = true,
            3..=5 => l.v += 20.0,
            6 => l.u += 14.0,
            _ => {}
        }
        l
    });
    // Hand "b": no middle MCP in either pass, so offsets are skipped;
    // one existence disagreement at keypoint 0; both passes agree that
    // keypoint 9 is absent. Existence 40/42 over both hands.
    let c = |k: usize| label(5.0 * k as f64, 3.0, k != 9, false);
    let a2 = hand("b", c);
    let b2 = hand("b", |k| {
        let mut l = c(k);
        if k == 0 {
            l.exists = false;
        }
        l
    });
    let r = consistency_check(&[a1.clone(), a2.clone()], &[b2.clone(), b1.clone()]);
    let counts = |g: &handmesh::dataio::Agreement| (g.agree, g.total);
    ensure!(r.pairs == 2, "{} pairs", r.pairs);
    ensure!(counts(&r.existence) == (40, 42), "existence {:?}", r.existence);
    // hand b: keypoint 9 absent in both passes, 19 keypoints exist in both
    ensure!(counts(&r.occlusion) == (18 + 19, 20 + 19), "occlusion {:?}", r.occlusion);
    ensure!(counts(&r.offset) == (15, 18), "offset {:?}", r.offset);
    ensure!(r.offset_skipped_hands == 1, "skipped {}", r.offset_skipped_hands);
    let exact = r.existence.percentage() == Some(100.0 * 40.0 / 42.0) && r.offset.percentage() == Some(100.0 * 15.0 / 18.0);
    ensure!(exact, "percentages differ from the hand computation");

    // bit-exact round trips on values with full 53-bit mantissas
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let mut records = Vec::new();
    for i in 0..200 {
        let mut rec = hand(&format!("img{i}"), |_| {
            label(rng.gen::<f64>() * 1e3, -rng.gen::<f64>() / 3.0, rng.gen_bool(0.9), rng.gen_bool(0.2))
        });
        rec.theta = Some((0..48).map(|_| rng.gen_range(-1.0..1.0) * std::f64::consts::PI).collect());
        rec.joints3d = Some((0..21).map(|_| [rng.gen(), rng.gen::<f64>() * 1e-7, -rng.gen::<f64>()]).collect());
        records.push(rec);
    }
    let text = annotations_to_string(&records);
    let back = parse_annotations(&text, ParseMode::Strict).map_err(|e| e.to_string())?.records;
    ensure!(back == records, "annotation round trip changed a record");
    ensure!(annotations_to_string(&back) == text, "annotation text is not a fixed point");
    for seed in 0..20 {
        let rig = if seed % 2 == 0 {
            synthetic_hand_rig::<f64>(seed)
        } else {
            {
            let spec = random_spec(&mut rng);
            random_rig::<f64, _>(&mut rng, spec)
        }
        };
        let json = asset_to_json(&rig);
        let again = asset_from_json::<f64>(&json).map_err(|e| e.to_string())?;
        ensure!(again == rig && asset_to_json(&again) == json, "asset round trip changed rig {seed}");
    }

    // schema violations name their line
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut short = records[4].clone();
    short.keypoints.pop();
    lines[5] = serde_json::to_string(&short).unwrap();
    lines[9] = "{\"image_id\": 3".into();
    let broken = lines.join("\n");
    let err = parse_annotations(&broken, ParseMode::Strict).unwrap_err();
    ensure!(err.line() == Some(6), "strict error on line {:?}: {err}", err.line());
    ensure!(err.to_string().contains("expected 21 keypoints, got 20"), "{err}");
    let lenient = parse_annotations(&broken, ParseMode::Lenient).map_err(|e| e.to_string())?;
    let skipped: Vec<usize> = lenient.skipped.iter().map(|s| s.0).collect();
    ensure!(skipped == [6, 10], "lenient skipped lines {skipped:?}");
    ensure!(lenient.records.len() == 198, "{} records kept", lenient.records.len());
    Ok("crafted agreement counts exact; 200 records and 20 rigs round-trip bit-exactly; violations on lines 6 and 10 reported".into())
}
