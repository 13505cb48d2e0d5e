//! Training-sample format and the synthetic data generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::annotations::{HandSide, KeypointAnnotation};
use super::image::Image;
use crate::camera::{project, CameraIntrinsics, CameraState, CropBox};
use crate::hand_model::synthetic::StatePrior;
use crate::hand_model::{pose_hand, HandModelAsset, HandState};
use crate::keypoints::{KeypointLabel, NUM_KEYPOINTS};
use crate::linalg::Vec3;
use crate::losses::GroundTruthSample;
use crate::scalar::Real;

/// One training example in the common format all sources are converted to.
///
/// 2D labels live in crop pixels; `crop_box` places the crop in the source
/// image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedSample {
    pub image: String,
    /// `[x0, y0, width, height]` in source-image pixels.
    pub crop_box: [f64; 4],
    pub crop_size: f64,
    pub keypoints2d: Vec<[f64; 2]>,
    pub keypoint_valid: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_translation: Option<[f64; 3]>,
    pub source: String,
}

impl UnifiedSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.keypoints2d.len() != NUM_KEYPOINTS || self.keypoint_valid.len() != NUM_KEYPOINTS {
            return Err(format!("expected {NUM_KEYPOINTS} 2D labels and validity flags"));
        }
        if !(self.crop_size > 0.0) || self.crop_box[2] <= 0.0 || self.crop_box[3] <= 0.0 {
            return Err("degenerate crop".into());
        }
        if let Some(x) = &self.joints3d {
            if x.len() != NUM_KEYPOINTS {
                return Err(format!("expected {NUM_KEYPOINTS} joints3d entries"));
            }
        }
        Ok(())
    }

    pub fn crop(&self) -> CropBox<f64> {
        let b = self.crop_box;
        CropBox::from_box(b[0], b[1], b[2], b[3], self.crop_size, self.crop_size).expect("validated crop box")
    }

    pub fn to_ground_truth<T: Real>(&self) -> GroundTruthSample<T> {
        let lit = |xs: &Vec<f64>| xs.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
        GroundTruthSample {
            theta: self.theta.as_ref().map(lit),
            beta: self.beta.as_ref().map(lit),
            joints3d: self
                .joints3d
                .as_ref()
                .map(|x| x.iter().map(|p| Vec3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]))).collect()),
            keypoints2d: Some(self.keypoints2d.iter().map(|p| [T::lit(p[0]), T::lit(p[1])]).collect()),
            keypoint_weights: Some(
                self.keypoint_valid
                    .iter()
                    .map(|v| if *v { T::one() } else { T::zero() })
                    .collect(),
            ),
        }
    }

    /// Converts from an annotation record, cropping to `crop_size`.
    pub fn from_annotation(a: &KeypointAnnotation, crop_size: f64) -> Option<UnifiedSample> {
        let crop = a.crop_for_size(crop_size)?;
        Some(UnifiedSample {
            image: a.image_id.clone(),
            crop_box: [
                crop.offset_x,
                crop.offset_y,
                crop.scale_x * crop_size,
                crop.scale_y * crop_size,
            ],
            crop_size,
            keypoints2d: a
                .keypoints
                .iter()
                .map(|k| [(k.u - crop.offset_x) / crop.scale_x, (k.v - crop.offset_y) / crop.scale_y])
                .collect(),
            keypoint_valid: a.keypoints.iter().map(|k| k.exists).collect(),
            theta: a.theta.clone(),
            beta: a.beta.clone(),
            joints3d: a.joints3d.clone(),
            camera_translation: a.camera_translation,
            source: a.source.clone().unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub prior: StatePrior,
    /// Side of the square crop in which keypoints are expressed.
    pub crop_size: f64,
    /// Side of the rendered patch; it covers the whole crop.
    pub image_size: usize,
    /// Camera distance of the hand centroid, meters.
    pub depth_range: (f64, f64),
    /// Lateral offset of the hand centroid from the optical axis, meters.
    pub center_jitter: f64,
    pub render: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            prior: StatePrior::default(),
            crop_size: 256.0,
            image_size: 32,
            depth_range: (5.5, 7.5),
            center_jitter: 0.01,
            render: true,
        }
    }
}

impl SynthConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        CameraIntrinsics::default_for_crop(self.crop_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub sample: UnifiedSample,
    pub state: HandState<f64>,
    pub camera: CameraState<f64>,
    /// Occlusion flags from a depth test between bones.
    pub occluded: Vec<bool>,
    pub image: Option<Image>,
}

impl SyntheticSample {
    pub fn to_annotation(&self) -> KeypointAnnotation {
        let s = &self.sample;
        let mut a = KeypointAnnotation::new(
            s.image.clone(),
            HandSide::Right,
            s.keypoints2d
                .iter()
                .zip(&self.occluded)
                .map(|(p, o)| KeypointLabel {
                    u: p[0],
                    v: p[1],
                    exists: true,
                    occluded: *o,
                })
                .collect(),
        );
        a.source = Some(s.source.clone());
        a.crop_box = Some(s.crop_box);
        a.theta = s.theta.clone();
        a.beta = s.beta.clone();
        a.joints3d = s.joints3d.clone();
        a.camera_translation = s.camera_translation;
        a
    }
}

/// Parent of each annotation keypoint in the drawn skeleton.
fn bone_parent(k: usize) -> Option<usize> {
    match k {
        0 => None,
        1 | 5 | 9 | 13 | 17 => Some(0),
        k => Some(k - 1),
    }
}

fn finger_color(k: usize) -> [f32; 3] {
    const COLORS: [[f32; 3]; 6] = [
        [0.95, 0.95, 0.95],
        [0.95, 0.25, 0.20],
        [0.95, 0.80, 0.15],
        [0.25, 0.85, 0.30],
        [0.20, 0.55, 0.95],
        [0.80, 0.30, 0.90],
    ];
    COLORS[if k == 0 { 0 } else { 1 + (k - 1) / 4 }]
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - qx).hypot(p[1] - qy), t)
}

/// A keypoint is occluded when a bone it does not belong to passes within
/// `radius` crop pixels of it in the image and at least 5 mm closer to the
/// camera.
fn occlusion_flags(pixels: &[[f64; 2]], depth: &[f64], radius: f64) -> Vec<bool> {
    (0..pixels.len())
        .map(|k| {
            (1..pixels.len()).any(|c| {
                let p = bone_parent(c).unwrap();
                if c == k || p == k {
                    return false;
                }
                let (d, t) = segment_distance(pixels[k], pixels[p], pixels[c]);
                let z = depth[p] + t * (depth[c] - depth[p]);
                d < radius && z + 0.005 < depth[k]
            })
        })
        .collect()
}

/// Procedural background plus the skeleton drawn as soft colored strokes.
/// Nearer bones are brighter and drawn over farther ones.
fn render(pixels: &[[f64; 2]], depth: &[f64], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Image {
    let n = cfg.image_size;
    let scale = n as f64 / cfg.crop_size;
    let mut img = Image::new(n, n);
    let (fx, fy, ph) = (rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6), rng.gen_range(0.0..6.28));
    let base: [f32; 3] = [rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)];
    let (zmin, zmax) = depth.iter().fold((f64::MAX, f64::MIN), |(a, b), z| (a.min(*z), b.max(*z)));
    let mut bones: Vec<usize> = (1..pixels.len()).collect();
    // far to near
    bones.sort_by(|a, b| {
        let za = depth[*a] + depth[bone_parent(*a).unwrap()];
        let zb = depth[*b] + depth[bone_parent(*b).unwrap()];
        zb.partial_cmp(&za).unwrap()
    });
    let sigma = 0.9;
    for y in 0..n {
        for x in 0..n {
            let t = ((x as f64 * fx + y as f64 * fy + ph).sin() * 0.5 + 0.5) as f32 * 0.15;
            let mut c = [base[0] + t, base[1] + t * 0.5, base[2] + t * 0.8];
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            for &k in &bones {
                let a = bone_parent(k).unwrap();
                let pa = [pixels[a][0] * scale, pixels[a][1] * scale];
                let pb = [pixels[k][0] * scale, pixels[k][1] * scale];
                let (d, s) = segment_distance(p, pa, pb);
                let alpha = (-(d * d) / (2.0 * sigma * sigma)).exp() as f32;
                if alpha < 1e-3 {
                    continue;
                }
                let z = depth[a] + s * (depth[k] - depth[a]);
                let shade = if zmax > zmin { 1.0 - 0.5 * ((z - zmin) / (zmax - zmin)) } else { 1.0 } as f32;
                let col = finger_color(k);
                for ch in 0..3 {
                    c[ch] = c[ch] * (1.0 - alpha) + alpha * col[ch] * shade;
                }
            }
            img.set(x, y, c.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    img
}

fn synthesize_one(asset: &HandModelAsset<f64>, index: usize, seed: u64, cfg: &SynthConfig) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intrinsics = cfg.intrinsics();
    let (state, camera, joints, pixels) = loop {
        let state = cfg.prior.sample(asset, &mut rng);
        let joints = asset.to_annotation_order(&pose_hand(asset, &state).expect("prior states are valid").joints);
        let c = joints.iter().fold(Vec3::zero(), |a, b| a + *b).scale(1.0 / joints.len() as f64);
        let j = cfg.center_jitter;
        let t = Vec3::new(
            -c[0] + rng.gen_range(-j..=j),
            -c[1] + rng.gen_range(-j..=j),
            -c[2] + rng.gen_range(cfg.depth_range.0..=cfg.depth_range.1),
        );
        let camera = CameraState {
            translation: t,
            intrinsics,
        };
        if let Ok(px) = project(&joints, &camera) {
            let inside = px
                .iter()
                .all(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < cfg.crop_size && p[1] < cfg.crop_size);
            if inside {
                break (state, camera, joints, px);
            }
        }
    };
    let depth: Vec<f64> = joints.iter().map(|p| p[2] + camera.translation[2]).collect();
    let occluded = occlusion_flags(&pixels, &depth, 0.02 * cfg.crop_size);
    let image = cfg.render.then(|| render(&pixels, &depth, cfg, &mut rng));
    let sample = UnifiedSample {
        image: format!("synth_{index:06}"),
        crop_box: [0.0, 0.0, cfg.crop_size, cfg.crop_size],
        crop_size: cfg.crop_size,
        keypoints2d: pixels,
        keypoint_valid: vec![true; NUM_KEYPOINTS],
        theta: Some(state.theta.clone()),
        beta: Some(state.beta.clone()),
        joints3d: Some(joints.iter().map(|p| p.0).collect()),
        camera_translation: Some(camera.translation.0),
        source: "synthetic".into(),
    };
    SyntheticSample {
        sample,
        state,
        camera,
        occluded,
        image,
    }
}

/// `count` samples with exact ground truth. Deterministic in `seed`; the
/// result does not depend on the thread count.
pub fn synthesize_dataset(
    asset: &HandModelAsset<f64>,
    count: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.gen()).collect();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| synthesize_one(asset, i, *s, cfg))
        .collect()
}
