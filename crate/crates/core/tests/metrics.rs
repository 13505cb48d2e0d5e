mod common;

use common::*;
use handmesh::keypoints::{KeypointLabel, Split};
use handmesh::linalg::{Mat3, Vec3};
use handmesh::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<Vec3<f64>> {
    (0..n).map(|_| random_vec3(rng, 0.1)).collect()
}

fn residual(tf: &SimilarityTransform<f64>, src: &[Vec3<f64>], dst: &[Vec3<f64>]) -> f64 {
    src.iter().zip(dst).map(|(s, d)| (tf.apply(s) - *d).norm_squared()).sum()
}

fn random_similarity(rng: &mut impl Rng) -> SimilarityTransform<f64> {
    SimilarityTransform {
        scale: rng.gen_range(0.2..5.0),
        rotation: random_rotation(rng),
        translation: random_vec3(rng, 1.0),
    }
}

#[test]
fn recovers_exact_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..200 {
        let src = random_cloud(&mut rng, 21);
        let truth = SimilarityTransform {
            scale: 2.0,
            ..random_similarity(&mut rng)
        };
        let dst = truth.apply_all(&src);
        let tf = procrustes_align(&src, &dst).unwrap();
        assert!((tf.scale - 2.0).abs() < 1e-9);
        assert!((tf.rotation - truth.rotation).frob_norm() < 1e-9);
        assert!((tf.translation - truth.translation).norm() < 1e-9);
        assert!((tf.rotation.det() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn reflected_target_still_yields_proper_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..50 {
        let src = random_cloud(&mut rng, 21);
        let mirror = Mat3::diag([-1.0, 1.0, 1.0]);
        let dst: Vec<_> = src.iter().map(|p| mirror.mul_vec(p)).collect();
        let tf = procrustes_align(&src, &dst).unwrap();
        let (ortho, det) = tf.rotation.orthonormality_error();
        assert!(ortho < 1e-9 && det < 1e-9);
    }
}

#[test]
fn beats_random_transform_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let src = random_cloud(&mut rng, 21);
        let truth = random_similarity(&mut rng);
        let dst: Vec<_> = truth
            .apply_all(&src)
            .into_iter()
            .map(|p| p + random_vec3(&mut rng, 0.01))
            .collect();
        let best = procrustes_align(&src, &dst).unwrap();
        let r_best = residual(&best, &src, &dst);
        for i in 0..10_000 {
            // half global draws, half local perturbations of the optimum
            let cand = if i % 2 == 0 {
                random_similarity(&mut rng)
            } else {
                let step = 10f64.powf(rng.gen_range(-6.0..-1.0));
                let w = random_vec3(&mut rng, step);
                SimilarityTransform {
                    scale: best.scale * (1.0 + rng.gen_range(-step..step)),
                    rotation: Mat3(quat_rotation(&w.0)).mul_mat(&best.rotation),
                    translation: best.translation + random_vec3(&mut rng, step),
                }
            };
            assert!(residual(&cand, &src, &dst) >= r_best - 1e-12);
        }
    }
}

#[test]
fn pa_mpjpe_is_similarity_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..200 {
        let gt = random_cloud(&mut rng, 21);
        let pred: Vec<_> = gt.iter().map(|p| *p + random_vec3(&mut rng, 0.01)).collect();
        let base = pa_mpjpe(&pred, &gt).unwrap();
        let moved = random_similarity(&mut rng).apply_all(&pred);
        assert!((pa_mpjpe(&moved, &gt).unwrap() - base).abs() < 1e-9);
    }
}

#[test]
fn trivial_pa_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let gt = random_cloud(&mut rng, 21);
    assert!(pa_mpjpe(&gt, &gt).unwrap() < 1e-9);
    let moved = random_similarity(&mut rng).apply_all(&gt);
    assert!(pa_mpjpe(&moved, &gt).unwrap() < 1e-9);
    let verts = random_cloud(&mut rng, 778);
    assert!(pa_mpvpe(&verts, &verts).unwrap() < 1e-9);
    assert!(pa_mpvpe(&random_similarity(&mut rng).apply_all(&verts), &verts).unwrap() < 1e-9);
}

#[test]
fn single_point_offset_unaligned() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let gt = random_cloud(&mut rng, 21);
    let mut pred = gt.clone();
    pred[7] += Vec3::new(0.0, 0.006, 0.008);
    assert!((mpjpe(&pred, &gt).unwrap() - 10.0 / 21.0).abs() < 1e-9);

    let verts = random_cloud(&mut rng, 778);
    let mut moved = verts.clone();
    moved[100] += Vec3::new(0.003, 0.0, 0.0);
    assert!((mpjpe(&moved, &verts).unwrap() - 3.0 / 778.0).abs() < 1e-9);
}

#[test]
fn alignment_never_increases_rms_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for _ in 0..500 {
        let gt = random_cloud(&mut rng, 21);
        let pred: Vec<_> = gt.iter().map(|p| *p + random_vec3(&mut rng, 0.03)).collect();
        let rms = |e: &[f64]| (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt();
        let raw = rms(&point_errors_mm(&pred, &gt).unwrap());
        let aligned = rms(&pa_point_errors_mm(&pred, &gt).unwrap());
        assert!(aligned <= raw + 1e-9);
    }
}

#[test]
fn aligned_mean_error_can_exceed_unaligned_mean_error() {
    // Least squares spreads a single outlier over all joints, so the
    // mean-of-norms can grow even though the squared residual shrinks.
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let gt = random_cloud(&mut rng, 21);
    let mut pred = gt.clone();
    pred[7] += Vec3::new(0.0, 0.006, 0.008);
    assert!(pa_mpjpe(&pred, &gt).unwrap() > mpjpe(&pred, &gt).unwrap());
}

#[test]
fn auc_of_uniform_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let errors: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..50.0)).collect();
    let a = auc(&errors, 50.0, 100).unwrap();
    assert!((a - 0.5).abs() < 0.01, "{a}");

    // independent oracle: direct counting at each grid point
    let grid: Vec<f64> = (0..100).map(|i| 50.0 * i as f64 / 99.0).collect();
    let frac: Vec<f64> = grid
        .iter()
        .map(|t| errors.iter().filter(|e| **e <= *t).count() as f64 / errors.len() as f64)
        .collect();
    let mut area = 0.0;
    for i in 1..grid.len() {
        area += (grid[i] - grid[i - 1]) * (frac[i] + frac[i - 1]) / 2.0;
    }
    assert!((a - area / 50.0).abs() < 1e-12);
}

#[test]
fn f_score_extremes_and_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    let cloud = random_cloud(&mut rng, 50);
    assert_eq!(f_score(&cloud, &cloud, 1e-3).unwrap(), 1.0);
    let far: Vec<_> = cloud.iter().map(|p| *p + Vec3::new(10.0, 0.0, 0.0)).collect();
    assert_eq!(f_score_unaligned(&far, &cloud, 15.0).unwrap(), 0.0);

    // pred: a, b, c, d; gt: a', b', e, f (mm)
    let mm = |x: f64, y: f64, z: f64| Vec3::new(x / 1000.0, y / 1000.0, z / 1000.0);
    let pred = vec![mm(0.0, 0.0, 0.0), mm(10.0, 0.0, 0.0), mm(0.0, 10.0, 0.0), mm(0.0, 0.0, 10.0)];
    let gt = vec![mm(1.0, 0.0, 0.0), mm(10.0, 2.0, 0.0), mm(30.0, 0.0, 0.0), mm(0.0, 0.0, 16.0)];
    // nearest distances pred->gt: 1, 2, sqrt(1+100)=10.05, 6
    // nearest distances gt->pred: 1, 2, 20, 6
    // at 5 mm: precision 2/4, recall 2/4 -> F 0.5
    assert!((f_score_unaligned(&pred, &gt, 5.0).unwrap() - 0.5).abs() < 1e-12);
    // at 7 mm: precision 3/4, recall 3/4
    assert!((f_score_unaligned(&pred, &gt, 7.0).unwrap() - 0.75).abs() < 1e-12);
    // at 15 mm: precision 4/4, recall 3/4 -> 2*1*0.75/1.75
    assert!((f_score_unaligned(&pred, &gt, 15.0).unwrap() - 1.5 / 1.75).abs() < 1e-12);
}

fn label(u: f64, v: f64, exists: bool, occluded: bool) -> KeypointLabel<f64> {
    KeypointLabel { u, v, exists, occluded }
}

/// 21 keypoints spread over a 100x80 box, so the normalizer is 100 px.
fn box_annotation() -> Vec<KeypointLabel<f64>> {
    (0..21)
        .map(|i| {
            let u = 100.0 * (i % 5) as f64 / 4.0;
            let v = 80.0 * (i / 5) as f64 / 4.0;
            label(u, v, true, i % 3 == 0)
        })
        .collect()
}

#[test]
fn pck_hand_enumerated() {
    let gt = box_annotation();
    // per-joint offsets cycle through 0.04, 0.07, 0.12 of the box side
    let offsets = [0.04, 0.07, 0.12];
    let pred: Vec<[f64; 2]> = gt
        .iter()
        .enumerate()
        .map(|(i, k)| [k.u + offsets[i % 3] * 100.0, k.v])
        .collect();
    // 7 joints at each offset
    let at = |t: f64| pck(&pred, &gt, t, Split::All).unwrap().unwrap();
    assert_eq!(at(0.05), PckCount { correct: 7, evaluated: 21 });
    assert_eq!(at(0.1), PckCount { correct: 14, evaluated: 21 });
    assert_eq!(at(0.15), PckCount { correct: 21, evaluated: 21 });
    // occluded joints are i % 3 == 0, exactly the 0.04 offsets
    let occ = |t: f64| pck(&pred, &gt, t, Split::Occluded).unwrap().unwrap();
    assert_eq!(occ(0.05), PckCount { correct: 7, evaluated: 7 });
    let vis = |t: f64| pck(&pred, &gt, t, Split::Visible).unwrap().unwrap();
    assert_eq!(vis(0.05), PckCount { correct: 0, evaluated: 14 });
    assert_eq!(vis(0.1), PckCount { correct: 7, evaluated: 14 });
}

#[test]
fn pck_flag_counting() {
    let mut gt = box_annotation();
    for (i, k) in gt.iter_mut().enumerate() {
        k.occluded = i >= 12;
    }
    gt[20].exists = false;
    let pred: Vec<[f64; 2]> = gt.iter().map(|k| [k.u, k.v]).collect();
    let count = |s| pck(&pred, &gt, 0.05, s).unwrap().unwrap();
    assert_eq!(count(Split::Visible), PckCount { correct: 12, evaluated: 12 });
    assert_eq!(count(Split::Occluded).evaluated, 8);
    assert_eq!(count(Split::All).evaluated, 20);
}

#[test]
fn aggregation_micro_and_macro() {
    let gt = box_annotation();
    let exact: Vec<[f64; 2]> = gt.iter().map(|k| [k.u, k.v]).collect();
    let config = EvalConfig::default();
    let one = [SampleInput {
        pred_keypoints: Some(&exact[..]),
        gt_keypoints: Some(&gt[..]),
        ..Default::default()
    }];
    let r = aggregate_report(&one, &config).unwrap();
    for t in DEFAULT_PCK_THRESHOLDS {
        for s in Split::ALL {
            assert_eq!(r.pck_at(t, s), Some(100.0));
        }
    }

    // sample A: 21 keypoints all wrong; sample B: only 3 existing, all right
    let wrong: Vec<[f64; 2]> = gt.iter().map(|k| [k.u + 90.0, k.v]).collect();
    let mut sparse = gt.clone();
    for (i, k) in sparse.iter_mut().enumerate() {
        k.exists = matches!(i, 0 | 6 | 18);
        k.occluded = false;
    }
    let two = [
        SampleInput {
            pred_keypoints: Some(&wrong[..]),
            gt_keypoints: Some(&gt[..]),
            ..Default::default()
        },
        SampleInput {
            pred_keypoints: Some(&exact[..]),
            gt_keypoints: Some(&sparse[..]),
            ..Default::default()
        },
    ];
    let micro = aggregate_report(&two, &config).unwrap();
    assert!((micro.pck_at(0.05, Split::All).unwrap() - 100.0 * 3.0 / 24.0).abs() < 1e-12);
    let macro_cfg = EvalConfig {
        averaging: PckAveraging::Macro,
        ..EvalConfig::default()
    };
    let macro_ = aggregate_report(&two, &macro_cfg).unwrap();
    assert!((macro_.pck_at(0.05, Split::All).unwrap() - 50.0).abs() < 1e-12);
}

#[test]
fn aggregation_means_over_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let gts: Vec<Vec<Vec3<f64>>> = (0..2).map(|_| random_cloud(&mut rng, 21)).collect();
    let preds: Vec<Vec<Vec3<f64>>> = gts
        .iter()
        .map(|g| g.iter().map(|p| *p + random_vec3(&mut rng, 0.01)).collect())
        .collect();
    let inputs: Vec<SampleInput<f64>> = (0..2)
        .map(|i| SampleInput {
            pred_joints: Some(&preds[i][..]),
            gt_joints: Some(&gts[i][..]),
            pred_vertices: Some(&preds[i][..]),
            gt_vertices: Some(&gts[i][..]),
            ..Default::default()
        })
        .collect();
    let config = EvalConfig::default();
    let single = aggregate_report(&inputs[..1], &config).unwrap();
    assert!((single.pa_mpjpe.unwrap() - pa_mpjpe(&preds[0], &gts[0]).unwrap()).abs() < 1e-12);
    assert!((single.f_at_5.unwrap() - f_score(&preds[0], &gts[0], 5.0).unwrap()).abs() < 1e-12);
    let both = aggregate_report(&inputs, &config).unwrap();
    let expect = (pa_mpjpe(&preds[0], &gts[0]).unwrap() + pa_mpjpe(&preds[1], &gts[1]).unwrap()) / 2.0;
    assert!((both.pa_mpjpe.unwrap() - expect).abs() < 1e-12);

    // merging partial accumulators equals sequential aggregation
    let mut a = EvalAccumulator::new(&config);
    let mut b = EvalAccumulator::new(&config);
    a.push(&evaluate_sample(&inputs[0], &config).unwrap(), false);
    b.push(&evaluate_sample(&inputs[1], &config).unwrap(), false);
    assert_eq!(a.merge(b).finish(&config).unwrap(), both);
}

proptest! {
    #[test]
    fn pck_monotone_in_threshold(seed in 0u64..10_000, t1 in 0.0f64..0.5, dt in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: Vec<_> = (0..21)
            .map(|_| label(rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0), rng.gen_bool(0.9), rng.gen_bool(0.3)))
            .collect();
        let pred: Vec<[f64; 2]> = gt.iter().map(|k| [k.u + rng.gen_range(-30.0..30.0), k.v + rng.gen_range(-30.0..30.0)]).collect();
        for s in Split::ALL {
            if let (Ok(a), Ok(b)) = (pck(&pred, &gt, t1, s).unwrap(), pck(&pred, &gt, t1 + dt, s).unwrap()) {
                prop_assert!(a.correct <= b.correct);
                prop_assert_eq!(a.evaluated, b.evaluated);
            }
        }
        // visible + occluded partition the existing keypoints
        if let (Ok(all), Ok(v), Ok(o)) = (
            pck(&pred, &gt, t1, Split::All).unwrap(),
            pck(&pred, &gt, t1, Split::Visible).unwrap(),
            pck(&pred, &gt, t1, Split::Occluded).unwrap(),
        ) {
            prop_assert_eq!(v.evaluated + o.evaluated, all.evaluated);
            prop_assert_eq!(v.correct + o.correct, all.correct);
        }
    }

    #[test]
    fn f_score_monotone_in_threshold(seed in 0u64..10_000, t1 in 0.1f64..30.0, dt in 0.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_cloud(&mut rng, 40);
        let pred: Vec<_> = gt.iter().map(|p| *p + random_vec3(&mut rng, 0.02)).collect();
        prop_assert!(f_score(&pred, &gt, t1).unwrap() <= f_score(&pred, &gt, t1 + dt).unwrap());
    }
}
