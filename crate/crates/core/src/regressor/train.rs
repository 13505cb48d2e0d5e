//! Training: end-to-end loss gradients, momentum SGD, and the alternating
//! discriminator update.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use super::{OutputCotangent, Regressor, RegressorError, RegressorOutput};
use crate::camera::{project, CameraIntrinsics, CameraState};
use crate::dataio::SyntheticSample;
use crate::hand_model::synthetic::StatePrior;
use crate::hand_model::{HandForward, HandModelAsset};
use crate::linalg::{Mat3, Vec3};
use crate::losses::discriminator::{DiscriminatorBank, PriorSample};
use crate::losses::{adversarial_discriminator_loss, total_loss, GroundTruthSample, LossWeights, PoseInput, Prediction};
use crate::rotation::rodrigues;
use crate::scalar::Real;

/// One supervised example. Keypoints live in crop pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<T> {
    /// `input_size^2 * 3` interleaved values in `[0, 1]`.
    pub image: Vec<T>,
    pub gt: GroundTruthSample<T>,
    pub intrinsics: CameraIntrinsics<T>,
    pub crop_size: T,
}

impl<T: Real> TrainSample<T> {
    /// `None` when the sample was synthesized without an image.
    pub fn from_synthetic(s: &SyntheticSample) -> Option<Self> {
        let image = s.image.as_ref()?;
        let i = &s.camera.intrinsics;
        Some(TrainSample {
            image: super::image_input(image),
            gt: s.sample.to_ground_truth(),
            intrinsics: CameraIntrinsics {
                fx: T::lit(i.fx),
                fy: T::lit(i.fy),
                cx: T::lit(i.cx),
                cy: T::lit(i.cy),
                width: T::lit(i.width),
                height: T::lit(i.height),
            },
            crop_size: T::lit(s.sample.crop_size),
        })
    }
}

/// Prediction of one sample with posed joints (annotation order) and camera.
struct Posed<'a, T> {
    out: RegressorOutput<T>,
    forward: HandForward<'a, T>,
    joints: Vec<Vec3<T>>,
    camera: CameraState<T>,
}

fn pose<'a, T: Real>(
    out: RegressorOutput<T>,
    asset: &'a HandModelAsset<T>,
    sample: &TrainSample<T>,
) -> Result<Posed<'a, T>, RegressorError> {
    let t = out.translation(sample.crop_size, &sample.intrinsics)?;
    let forward = HandForward::run(asset, &out.rotations, &out.beta)?;
    let joints = asset.to_annotation_order(&forward.joints());
    Ok(Posed {
        out,
        forward,
        joints,
        camera: CameraState {
            translation: t,
            intrinsics: sample.intrinsics,
        },
    })
}

/// Loss of a batch and its parameter gradient, both averaged over samples.
#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    pub loss_3d: T,
    pub loss_2d: T,
    pub adversarial: T,
    pub total: T,
    pub grads: Vec<Tensor<T>>,
    /// Predicted (pose, shape) pairs, for the discriminator update.
    pub fakes: Vec<PriorSample<T>>,
}

struct SampleGradient<T> {
    terms: [T; 4],
    grads: Vec<Tensor<T>>,
    fake: PriorSample<T>,
}

fn sample_gradient<T: Real>(
    model: &Regressor<T>,
    asset: &HandModelAsset<T>,
    sample: &TrainSample<T>,
    bank: Option<&DiscriminatorBank<T>>,
    weights: &LossWeights,
) -> Result<SampleGradient<T>, RegressorError> {
    let cfg = model.config();
    let pass = model.record(&sample.image)?;
    let raw = pass.raw();
    let p = pose(raw.decode(cfg)?, asset, sample)?;
    let pred = Prediction {
        pose: PoseInput::Rotations(&p.out.rotations),
        beta: &p.out.beta,
        joints: &p.joints,
        camera: Some(&p.camera),
    };
    let (terms, g) = total_loss(&pred, &sample.gt, bank, weights)?;

    let rig = p.forward.vjp(&[], &asset.from_annotation_order(&g.d_joints))?;
    let rotations = rig
        .rotations
        .iter()
        .enumerate()
        .map(|(j, r)| *r + Mat3::from_flat(&g.d_pose[9 * j..9 * j + 9]))
        .collect();
    let beta = rig.beta.iter().zip(&g.d_beta).map(|(a, b)| *a + *b).collect();
    // t = (tx, ty, 2 fx / (s b)), so dt_z/ds = -t_z / s
    let (s, t) = (p.out.camera[0], p.camera.translation);
    let dt = g.d_translation;
    let d_out = OutputCotangent {
        rotations,
        beta,
        camera: [-dt[2] * t[2] / s, dt[0], dt[1]],
    };
    let grads = pass.backward(&raw.decode_vjp(cfg, &d_out));
    Ok(SampleGradient {
        terms: [terms.loss_3d, terms.loss_2d, terms.adversarial, terms.total],
        grads,
        fake: PriorSample {
            rotations: p.out.rotations,
            beta: p.out.beta,
        },
    })
}

/// Mean total loss over `batch` and its gradient in every parameter.
/// Samples run in parallel; the reduction is sequential, so the result does
/// not depend on the thread count.
pub fn batch_gradient<T: Real>(
    model: &Regressor<T>,
    asset: &HandModelAsset<T>,
    batch: &[TrainSample<T>],
    bank: Option<&DiscriminatorBank<T>>,
    weights: &LossWeights,
) -> Result<BatchGradient<T>, RegressorError> {
    if batch.is_empty() {
        return Err(RegressorError::Shape {
            what: "batch size",
            expected: 1,
            got: 0,
        });
    }
    let per: Vec<SampleGradient<T>> = batch
        .par_iter()
        .map(|s| sample_gradient(model, asset, s, bank, weights))
        .collect::<Result<_, _>>()?;
    let inv = T::one() / T::from_usize_lossy(batch.len());
    let mut grads: Vec<Tensor<T>> = model.params().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    let mut terms = [T::zero(); 4];
    let mut fakes = Vec::with_capacity(per.len());
    for s in per {
        for (acc, g) in grads.iter_mut().zip(&s.grads) {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += *b * inv;
            }
        }
        for (a, b) in terms.iter_mut().zip(s.terms) {
            *a += b * inv;
        }
        fakes.push(s.fake);
    }
    Ok(BatchGradient {
        loss_3d: terms[0],
        loss_2d: terms[1],
        adversarial: terms[2],
        total: terms[3],
        grads,
        fakes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to `final_fraction` of it at `steps`.
    Cosine { steps: usize, final_fraction: f64 },
}

impl LrSchedule {
    pub fn factor(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { steps, final_fraction } => {
                let x = (step as f64 / steps.max(1) as f64).min(1.0);
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub schedule: LrSchedule,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weights: LossWeights,
    /// Train and apply the discriminator bank.
    pub adversarial: bool,
    pub disc_lr: f64,
    pub disc_momentum: f64,
    pub disc_hidden: usize,
    /// Source of the discriminator's real samples.
    pub real_prior: StatePrior,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            schedule: LrSchedule::Constant,
            grad_clip: Some(10.0),
            weights: LossWeights {
                adversarial: 0.01,
                ..LossWeights::default()
            },
            adversarial: true,
            disc_lr: 0.01,
            disc_momentum: 0.9,
            disc_hidden: 32,
            real_prior: StatePrior::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub lr: f64,
    pub loss_3d: f64,
    pub loss_2d: f64,
    pub adversarial: f64,
    pub total: f64,
    /// Discriminator objective before its update.
    pub disc_loss: Option<f64>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

fn momentum_step<T: Real>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, mu: T) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + *g;
        *p -= lr * *v;
    }
}

/// Owns the model, the discriminator bank and both optimizer states.
/// One writer: `train_step` takes `&mut self`.
pub struct Trainer<'a, T> {
    pub model: Regressor<T>,
    pub bank: Option<DiscriminatorBank<T>>,
    pub config: TrainConfig,
    asset: &'a HandModelAsset<T>,
    velocity: Vec<Tensor<T>>,
    disc_velocity: Vec<Vec<T>>,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(model: Regressor<T>, asset: &'a HandModelAsset<T>, config: TrainConfig) -> Result<Self, RegressorError> {
        let cfg = model.config();
        if cfg.num_joints != asset.num_joints() || cfg.num_shape != asset.num_shape() {
            return Err(RegressorError::InvalidConfig(format!(
                "model emits {} joints and {} shape coefficients, asset has {} and {}",
                cfg.num_joints,
                cfg.num_shape,
                asset.num_joints(),
                asset.num_shape()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bank = config
            .adversarial
            .then(|| DiscriminatorBank::new(asset.num_joints(), asset.num_shape(), config.disc_hidden, &mut rng));
        let velocity = model.params().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        let disc_velocity = bank.as_ref().map_or_else(Vec::new, |b| b.zero_grads());
        Ok(Trainer {
            model,
            bank,
            config,
            asset,
            velocity,
            disc_velocity,
            rng,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One generator update on `batch`, then one discriminator update with
    /// the batch's predictions as fakes and fresh prior draws as reals.
    pub fn train_step(&mut self, batch: &[TrainSample<T>]) -> Result<StepStats, RegressorError> {
        let cfg = &self.config;
        let weights = if self.bank.is_some() {
            cfg.weights
        } else {
            LossWeights {
                adversarial: 0.0,
                ..cfg.weights
            }
        };
        let mut bg = batch_gradient(&self.model, self.asset, batch, self.bank.as_ref(), &weights)?;
        let norm = bg
            .grads
            .iter()
            .flat_map(|t| &t.data)
            .map(|g| g.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        if let Some(c) = cfg.grad_clip {
            if norm > c {
                let k = T::lit(c / norm);
                bg.grads.iter_mut().flat_map(|t| &mut t.data).for_each(|g| *g *= k);
            }
        }
        let lr = cfg.lr * cfg.schedule.factor(self.step);
        let mu = T::lit(cfg.momentum);
        for ((p, g), v) in self.model.params_mut().iter_mut().zip(&bg.grads).zip(&mut self.velocity) {
            momentum_step(&mut p.data, &g.data, &mut v.data, T::lit(lr), mu);
        }

        let mut disc_loss = None;
        if let Some(bank) = &mut self.bank {
            let reals: Vec<PriorSample<T>> = (0..batch.len())
                .map(|_| {
                    let s = cfg.real_prior.sample(self.asset, &mut self.rng);
                    let rotations = s
                        .theta
                        .chunks(3)
                        .map(|c| rodrigues(&Vec3::from_slice(c)))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(PriorSample { rotations, beta: s.beta })
                })
                .collect::<Result<_, crate::rotation::RotationError>>()
                .map_err(|e| RegressorError::Loss(e.into()))?;
            let (v, grads) = adversarial_discriminator_loss(&reals, &bg.fakes, bank)?;
            let (dlr, dmu) = (T::lit(cfg.disc_lr * cfg.schedule.factor(self.step)), T::lit(cfg.disc_momentum));
            for ((k, g), vel) in bank.kinds().into_iter().zip(&grads).zip(&mut self.disc_velocity) {
                momentum_step(bank.get_mut(k).params_mut(), g, vel, dlr, dmu);
            }
            disc_loss = Some(v.to_f64_lossy());
        }

        let stats = StepStats {
            step: self.step,
            lr,
            loss_3d: bg.loss_3d.to_f64_lossy(),
            loss_2d: bg.loss_2d.to_f64_lossy(),
            adversarial: bg.adversarial.to_f64_lossy(),
            total: bg.total.to_f64_lossy(),
            disc_loss,
            grad_norm: norm,
        };
        self.step += 1;
        Ok(stats)
    }

    /// Runs `steps` updates. Batches are consecutive slices of a reshuffled
    /// copy of `data`; a batch size of at least `data.len()` uses all of it
    /// every step.
    pub fn train(
        &mut self,
        data: &[TrainSample<T>],
        steps: usize,
        batch_size: usize,
        mut on_step: impl FnMut(&StepStats),
    ) -> Result<(), RegressorError> {
        let bs = batch_size.clamp(1, data.len().max(1));
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = data.len();
        let mut batch = Vec::with_capacity(bs);
        for _ in 0..steps {
            batch.clear();
            if bs == data.len() {
                batch.extend(data.iter().cloned());
            } else {
                while batch.len() < bs {
                    if cursor == order.len() {
                        order.shuffle(&mut self.rng);
                        cursor = 0;
                    }
                    batch.push(data[order[cursor]].clone());
                    cursor += 1;
                }
            }
            let stats = self.train_step(&batch)?;
            on_step(&stats);
        }
        Ok(())
    }
}

/// Mean pixel distance between projected predicted joints and the valid
/// ground-truth keypoints of one sample.
pub fn reprojection_error<T: Real>(
    model: &Regressor<T>,
    asset: &HandModelAsset<T>,
    sample: &TrainSample<T>,
) -> Result<T, RegressorError> {
    let p = pose(model.forward(&sample.image)?, asset, sample)?;
    let px = project(&p.joints, &p.camera)?;
    let kp = sample.gt.keypoints2d.as_ref().ok_or(RegressorError::Shape {
        what: "2D keypoints",
        expected: asset.num_keypoints(),
        got: 0,
    })?;
    let (mut sum, mut n) = (T::zero(), 0usize);
    for (i, (a, b)) in px.iter().zip(kp).enumerate() {
        if sample.gt.weight(i) > T::zero() {
            sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            n += 1;
        }
    }
    Ok(if n == 0 { T::zero() } else { sum / T::from_usize_lossy(n) })
}

/// [`reprojection_error`] averaged over `samples`.
pub fn mean_reprojection_error<T: Real>(
    model: &Regressor<T>,
    asset: &HandModelAsset<T>,
    samples: &[TrainSample<T>],
) -> Result<f64, RegressorError> {
    let errs: Vec<T> = samples
        .par_iter()
        .map(|s| reprojection_error(model, asset, s))
        .collect::<Result<_, _>>()?;
    Ok(errs.iter().map(|e| e.to_f64_lossy()).sum::<f64>() / errs.len().max(1) as f64)
}
