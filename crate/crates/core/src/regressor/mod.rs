//! Image-to-parameters regressor: a patch-embedding vision transformer
//! encoder, a decoder with a single learned query token that cross-attends
//! to the encoder tokens, and linear heads for pose, shape and camera.
//!
//! The network runs on [`tape::Tape`], so every forward pass can be
//! differentiated end to end. Inputs are `H x W x 3` interleaved RGB in
//! `[0, 1]`; they are normalized with [`IMAGE_MEAN`] and [`IMAGE_STD`]
//! before patching.
//!
//! Pose heads emit either the continuous 6D representation (default,
//! turned into matrices by Gram-Schmidt) or axis-angle vectors. The camera
//! head emits `(a0, a1, a2)` that map to the crop-space weak-perspective
//! triple as `s = camera_scale_init * exp(a0)`, `tx = translation_scale * a1`,
//! `ty = translation_scale * a2`, so `s` is positive by construction.

pub mod checkpoint;
pub mod tape;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{weak_perspective_to_translation, CameraError, CameraIntrinsics};
use crate::hand_model::HandModelError;
use crate::linalg::{Mat3, Vec3};
use crate::losses::LossError;
use crate::rotation::{identity_6d, rodrigues, rodrigues_vjp, sixd_to_matrix, sixd_vjp};
use crate::scalar::Real;
use tape::{Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{
    mean_reprojection_error, reprojection_error, LrSchedule, StepStats, TrainConfig, TrainSample, Trainer,
};

/// Per-channel normalization applied to `[0, 1]` inputs.
pub const IMAGE_MEAN: f64 = 0.5;
pub const IMAGE_STD: f64 = 0.25;
/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("invalid regressor config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    HandModel(#[from] HandModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RotationRep {
    #[default]
    SixD,
    AxisAngle,
}

impl RotationRep {
    pub fn dim(self) -> usize {
        match self {
            RotationRep::SixD => 6,
            RotationRep::AxisAngle => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    /// Side of the square input image, pixels.
    pub input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Encoder blocks.
    pub depth: usize,
    pub num_heads: usize,
    /// MLP hidden width as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    pub decoder_depth: usize,
    pub rotation: RotationRep,
    pub num_joints: usize,
    pub num_shape: usize,
    /// Weak-perspective scale emitted by an untrained model.
    pub camera_scale_init: f64,
    /// Meters of translation per unit of the camera head output.
    pub translation_scale: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig::desk()
    }
}

impl RegressorConfig {
    /// Miniature network for gradient checks.
    pub fn tiny() -> Self {
        RegressorConfig {
            input_size: 32,
            patch_size: 8,
            embed_dim: 16,
            depth: 1,
            num_heads: 2,
            mlp_ratio: 2,
            decoder_depth: 1,
            rotation: RotationRep::SixD,
            num_joints: 16,
            num_shape: 10,
            // hand about 6.5 m away at focal 5000 in a 256 px crop
            camera_scale_init: 6.0,
            translation_scale: 0.05,
        }
    }

    /// Default training scale.
    pub fn desk() -> Self {
        RegressorConfig {
            embed_dim: 64,
            depth: 2,
            num_heads: 4,
            ..RegressorConfig::tiny()
        }
    }

    /// ViT-H sized encoder. Only its shapes are ever computed.
    pub fn huge() -> Self {
        RegressorConfig {
            input_size: 256,
            patch_size: 16,
            embed_dim: 1280,
            depth: 32,
            num_heads: 16,
            mlp_ratio: 4,
            decoder_depth: 6,
            ..RegressorConfig::tiny()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "desk" => Some(Self::desk()),
            "huge" => Some(Self::huge()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), RegressorError> {
        let bad = |m: String| Err(RegressorError::InvalidConfig(m));
        if self.input_size == 0 || self.patch_size == 0 || self.embed_dim == 0 || self.num_heads == 0 {
            return bad("sizes must be positive".into());
        }
        if self.input_size % self.patch_size != 0 {
            return bad(format!(
                "input size {} is not divisible by patch size {}",
                self.input_size, self.patch_size
            ));
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed dim {} is not divisible by head count {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.mlp_ratio == 0 || self.num_joints == 0 {
            return bad("mlp ratio and joint count must be positive".into());
        }
        if !(self.camera_scale_init > 0.0 && self.camera_scale_init.is_finite())
            || !(self.translation_scale > 0.0 && self.translation_scale.is_finite())
        {
            return bad("camera scales must be positive and finite".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.input_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn token_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn pose_dim(&self) -> usize {
        self.rotation.dim() * self.num_joints
    }

    /// Every parameter tensor as `(name, rows, cols)`, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        build_layout(self).0.into_iter().map(|s| (s.name, s.rows, s.cols)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LinearIds {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct NormIds {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AttnIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    out: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EncoderIds {
    norm1: NormIds,
    attn: AttnIds,
    norm2: NormIds,
    fc1: LinearIds,
    fc2: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DecoderIds {
    norm_query: NormIds,
    norm_context: NormIds,
    attn: AttnIds,
    norm2: NormIds,
    fc1: LinearIds,
    fc2: LinearIds,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    patch: LinearIds,
    pos: usize,
    encoder: Vec<EncoderIds>,
    query: usize,
    decoder: Vec<DecoderIds>,
    final_norm: NormIds,
    pose_head: LinearIds,
    shape_head: LinearIds,
    camera_head: LinearIds,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.0.push(ParamSpec { name, rows, cols, init });
        self.0.len() - 1
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize) -> LinearIds {
        LinearIds {
            w: self.add(format!("{prefix}.weight"), i, o, Init::Normal),
            b: self.add(format!("{prefix}.bias"), 1, o, Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gamma: self.add(format!("{prefix}.gamma"), 1, d, Init::Ones),
            beta: self.add(format!("{prefix}.beta"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIds {
        AttnIds {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            out: self.linear(&format!("{prefix}.out"), d, d),
        }
    }
}

fn build_layout(cfg: &RegressorConfig) -> (Vec<ParamSpec>, Layout) {
    let d = cfg.embed_dim;
    let hidden = cfg.mlp_ratio * d;
    let mut s = Specs(Vec::new());
    let patch = s.linear("patch_embed", cfg.token_dim(), d);
    let pos = s.add("pos_embed".into(), cfg.num_tokens(), d, Init::Normal);
    let encoder = (0..cfg.depth)
        .map(|l| {
            let p = format!("encoder.{l}");
            EncoderIds {
                norm1: s.norm(&format!("{p}.norm1"), d),
                attn: s.attn(&format!("{p}.attn"), d),
                norm2: s.norm(&format!("{p}.norm2"), d),
                fc1: s.linear(&format!("{p}.mlp.fc1"), d, hidden),
                fc2: s.linear(&format!("{p}.mlp.fc2"), hidden, d),
            }
        })
        .collect();
    let query = s.add("decoder.query".into(), 1, d, Init::Zeros);
    let decoder = (0..cfg.decoder_depth)
        .map(|l| {
            let p = format!("decoder.{l}");
            DecoderIds {
                norm_query: s.norm(&format!("{p}.norm_query"), d),
                norm_context: s.norm(&format!("{p}.norm_context"), d),
                attn: s.attn(&format!("{p}.cross_attn"), d),
                norm2: s.norm(&format!("{p}.norm2"), d),
                fc1: s.linear(&format!("{p}.mlp.fc1"), d, hidden),
                fc2: s.linear(&format!("{p}.mlp.fc2"), hidden, d),
            }
        })
        .collect();
    let final_norm = s.norm("decoder.norm", d);
    let pose_bias: Vec<f64> = match cfg.rotation {
        RotationRep::SixD => identity_6d::<f64>().repeat(cfg.num_joints),
        RotationRep::AxisAngle => vec![0.0; 3 * cfg.num_joints],
    };
    let mut head = |name: &str, o: usize, bias: Vec<f64>| LinearIds {
        w: s.add(format!("head.{name}.weight"), d, o, Init::Zeros),
        b: s.add(format!("head.{name}.bias"), 1, o, Init::Values(bias)),
    };
    let pose_head = head("pose", cfg.pose_dim(), pose_bias);
    let shape_head = head("shape", cfg.num_shape, vec![0.0; cfg.num_shape]);
    let camera_head = head("camera", 3, vec![0.0; 3]);
    let layout = Layout {
        patch,
        pos,
        encoder,
        query,
        decoder,
        final_norm,
        pose_head,
        shape_head,
        camera_head,
    };
    (s.0, layout)
}

/// Splits an `H x W x 3` interleaved image into `(H/p)(W/p)` row-major
/// patches, each flattened as `(dy, dx, channel)`.
pub fn patchify<T: Real>(image: &[T], size: usize, patch: usize) -> Result<Tensor<T>, RegressorError> {
    if image.len() != size * size * 3 {
        return Err(RegressorError::Shape {
            what: "image values",
            expected: size * size * 3,
            got: image.len(),
        });
    }
    if patch == 0 || size % patch != 0 {
        return Err(RegressorError::InvalidConfig(format!(
            "patch size {patch} does not tile input size {size}"
        )));
    }
    let g = size / patch;
    let dim = 3 * patch * patch;
    let mut out = Tensor::zeros(g * g, dim);
    for gy in 0..g {
        for gx in 0..g {
            let t = gy * g + gx;
            for dy in 0..patch {
                let src = 3 * ((gy * patch + dy) * size + gx * patch);
                let dst = t * dim + dy * patch * 3;
                out.data[dst..dst + 3 * patch].copy_from_slice(&image[src..src + 3 * patch]);
            }
        }
    }
    Ok(out)
}

/// Interleaved image values as regressor input, `[0, 1]` range.
pub fn image_input<T: Real>(image: &crate::dataio::Image) -> Vec<T> {
    image.data.iter().map(|v| T::lit(*v as f64)).collect()
}

/// Raw head outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutput<T> {
    /// `rotation.dim() * J` values.
    pub pose: Vec<T>,
    pub beta: Vec<T>,
    pub camera: [T; 3],
}

/// Decoded prediction: local joint rotations, shape, and the crop-space
/// weak-perspective camera `(s, tx, ty)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorOutput<T> {
    pub rotations: Vec<Mat3<T>>,
    pub beta: Vec<T>,
    pub camera: [T; 3],
}

impl<T: Real> RegressorOutput<T> {
    /// Camera translation for a crop of side `crop_size` seen through `intrinsics`.
    pub fn translation(&self, crop_size: T, intrinsics: &CameraIntrinsics<T>) -> Result<Vec3<T>, CameraError> {
        let [s, tx, ty] = self.camera;
        weak_perspective_to_translation(s, tx, ty, crop_size, intrinsics)
    }
}

/// Cotangents of the decoded outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputCotangent<T> {
    pub rotations: Vec<Mat3<T>>,
    pub beta: Vec<T>,
    pub camera: [T; 3],
}

impl<T: Real> RawOutput<T> {
    pub fn decode(&self, cfg: &RegressorConfig) -> Result<RegressorOutput<T>, RegressorError> {
        let k = cfg.rotation.dim();
        let rotations = self
            .pose
            .chunks(k)
            .map(|c| match cfg.rotation {
                RotationRep::SixD => Ok(sixd_to_matrix(c)),
                RotationRep::AxisAngle => rodrigues(&Vec3::from_slice(c)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| RegressorError::Loss(LossError::Rotation(e)))?;
        let [a0, a1, a2] = self.camera;
        Ok(RegressorOutput {
            rotations,
            beta: self.beta.clone(),
            camera: [
                T::lit(cfg.camera_scale_init) * a0.exp(),
                T::lit(cfg.translation_scale) * a1,
                T::lit(cfg.translation_scale) * a2,
            ],
        })
    }

    /// Pulls cotangents of the decoded outputs back to the raw head values.
    pub fn decode_vjp(&self, cfg: &RegressorConfig, d: &OutputCotangent<T>) -> RawOutput<T> {
        let k = cfg.rotation.dim();
        let mut pose = Vec::with_capacity(self.pose.len());
        for (c, dr) in self.pose.chunks(k).zip(&d.rotations) {
            match cfg.rotation {
                RotationRep::SixD => pose.extend(sixd_vjp(c, dr)),
                RotationRep::AxisAngle => pose.extend(rodrigues_vjp(&Vec3::from_slice(c), dr).0),
            }
        }
        let ts = T::lit(cfg.translation_scale);
        RawOutput {
            pose,
            beta: d.beta.clone(),
            camera: [
                d.camera[0] * T::lit(cfg.camera_scale_init) * self.camera[0].exp(),
                d.camera[1] * ts,
                d.camera[2] * ts,
            ],
        }
    }
}

/// A recorded forward pass, ready for [`Tape::backward`].
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    /// Parameter leaves, in [`Regressor::param_names`] order.
    pub params: Vec<Var>,
    pub pose: Var,
    pub beta: Var,
    pub camera: Var,
    /// Attention weights: every encoder head, then every decoder head.
    pub attention: Vec<Var>,
}

impl<T: Real> ForwardPass<T> {
    pub fn raw(&self) -> RawOutput<T> {
        let c = &self.tape.value(self.camera).data;
        RawOutput {
            pose: self.tape.value(self.pose).data.clone(),
            beta: self.tape.value(self.beta).data.clone(),
            camera: [c[0], c[1], c[2]],
        }
    }

    /// Parameter gradients given cotangents of the raw outputs.
    pub fn backward(&self, d: &RawOutput<T>) -> Vec<Tensor<T>> {
        let seeds = vec![
            (self.pose, Tensor::from_vec(1, d.pose.len(), d.pose.clone())),
            (self.beta, Tensor::from_vec(1, d.beta.len(), d.beta.clone())),
            (self.camera, Tensor::from_vec(1, 3, d.camera.to_vec())),
        ];
        let mut g = self.tape.backward(seeds);
        self.params
            .iter()
            .map(|p| {
                let (r, c) = self.tape.value(*p).shape();
                g.take(*p).unwrap_or_else(|| Tensor::zeros(r, c))
            })
            .collect()
    }
}

/// Head values of a decoder pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub pose: Var,
    pub beta: Var,
    pub camera: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor<T> {
    config: RegressorConfig,
    names: Vec<String>,
    layout: Layout,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Regressor<T> {
    /// Truncated-normal weights, zero output-head weights, and head biases
    /// that encode the rest pose, zero shape and the initial camera.
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self, RegressorError> {
        config.validate()?;
        let (specs, layout) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let params = specs
            .iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data = match &s.init {
                    Init::Normal => (0..n)
                        .map(|_| loop {
                            let x: f64 = normal.sample(&mut rng);
                            if x.abs() <= 2.0 * INIT_STD {
                                break T::lit(x);
                            }
                        })
                        .collect(),
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::Values(v) => v.iter().map(|x| T::lit(*x)).collect(),
                };
                Tensor::from_vec(s.rows, s.cols, data)
            })
            .collect();
        Ok(Regressor {
            config,
            names: specs.into_iter().map(|s| s.name).collect(),
            layout,
            params,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_params(config: RegressorConfig, params: Vec<(String, Tensor<T>)>) -> Result<Self, RegressorError> {
        config.validate()?;
        let (specs, layout) = build_layout(&config);
        if specs.len() != params.len() {
            return Err(RegressorError::Shape {
                what: "parameter tensors",
                expected: specs.len(),
                got: params.len(),
            });
        }
        for (s, (name, t)) in specs.iter().zip(&params) {
            if *name != s.name || t.shape() != (s.rows, s.cols) {
                return Err(RegressorError::Checkpoint(format!(
                    "expected tensor {} [{}x{}], found {name} [{}x{}]",
                    s.name, s.rows, s.cols, t.rows, t.cols
                )));
            }
        }
        Ok(Regressor {
            config,
            names: specs.into_iter().map(|s| s.name).collect(),
            layout,
            params: params.into_iter().map(|(_, t)| t).collect(),
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Regressor<U> {
        Regressor {
            config: self.config.clone(),
            names: self.names.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|t| Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect()))
                .collect(),
        }
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Normalized patch tokens projected to the embedding width, plus
    /// positional embeddings.
    pub fn embed(&self, tape: &mut Tape<T>, p: &[Var], tokens: Tensor<T>) -> Var {
        let (mean, inv_std) = (T::lit(IMAGE_MEAN), T::one() / T::lit(IMAGE_STD));
        let mut tokens = tokens;
        tokens.data.iter_mut().for_each(|x| *x = (*x - mean) * inv_std);
        let x = tape.leaf(tokens);
        let l = &self.layout;
        let e = tape.linear(x, p[l.patch.w], p[l.patch.b]);
        tape.add(e, p[l.pos])
    }

    fn attention(&self, tape: &mut Tape<T>, p: &[Var], ids: &AttnIds, xq: Var, xkv: Var, probs: &mut Vec<Var>) -> Var {
        let q = tape.linear(xq, p[ids.q.w], p[ids.q.b]);
        let k = tape.linear(xkv, p[ids.k.w], p[ids.k.b]);
        let v = tape.linear(xkv, p[ids.v.w], p[ids.v.b]);
        let dh = self.config.head_dim();
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let heads: Vec<Var> = (0..self.config.num_heads)
            .map(|h| {
                let qh = tape.cols(q, h * dh, dh);
                let kh = tape.cols(k, h * dh, dh);
                let vh = tape.cols(v, h * dh, dh);
                let s = tape.matmul_bt(qh, kh);
                let s = tape.scale(s, scale);
                let a = tape.softmax_rows(s);
                probs.push(a);
                tape.matmul(a, vh)
            })
            .collect();
        let o = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        tape.linear(o, p[ids.out.w], p[ids.out.b])
    }

    fn mlp(&self, tape: &mut Tape<T>, p: &[Var], fc1: &LinearIds, fc2: &LinearIds, x: Var) -> Var {
        let h = tape.linear(x, p[fc1.w], p[fc1.b]);
        let h = tape.gelu(h);
        tape.linear(h, p[fc2.w], p[fc2.b])
    }

    /// Pre-norm encoder stack; shape preserving. Pushes the attention
    /// weights of every head onto `probs`.
    pub fn encode(&self, tape: &mut Tape<T>, p: &[Var], x: Var, probs: &mut Vec<Var>) -> Var {
        let mut x = x;
        for b in &self.layout.encoder {
            let h = tape.layer_norm(x, p[b.norm1.gamma], p[b.norm1.beta]);
            let a = self.attention(tape, p, &b.attn, h, h, probs);
            x = tape.add(x, a);
            let h = tape.layer_norm(x, p[b.norm2.gamma], p[b.norm2.beta]);
            let m = self.mlp(tape, p, &b.fc1, &b.fc2, h);
            x = tape.add(x, m);
        }
        x
    }

    /// The single query token cross-attends to `context`; linear heads
    /// read the final query.
    pub fn decode_head(&self, tape: &mut Tape<T>, p: &[Var], context: Var, probs: &mut Vec<Var>) -> HeadVars {
        let l = &self.layout;
        let mut q = p[l.query];
        for b in &l.decoder {
            let qn = tape.layer_norm(q, p[b.norm_query.gamma], p[b.norm_query.beta]);
            let cn = tape.layer_norm(context, p[b.norm_context.gamma], p[b.norm_context.beta]);
            let a = self.attention(tape, p, &b.attn, qn, cn, probs);
            q = tape.add(q, a);
            let h = tape.layer_norm(q, p[b.norm2.gamma], p[b.norm2.beta]);
            let m = self.mlp(tape, p, &b.fc1, &b.fc2, h);
            q = tape.add(q, m);
        }
        let f = tape.layer_norm(q, p[l.final_norm.gamma], p[l.final_norm.beta]);
        HeadVars {
            pose: tape.linear(f, p[l.pose_head.w], p[l.pose_head.b]),
            beta: tape.linear(f, p[l.shape_head.w], p[l.shape_head.b]),
            camera: tape.linear(f, p[l.camera_head.w], p[l.camera_head.b]),
        }
    }

    /// Records a full forward pass on a fresh tape.
    pub fn record(&self, image: &[T]) -> Result<ForwardPass<T>, RegressorError> {
        let cfg = &self.config;
        let tokens = patchify(image, cfg.input_size, cfg.patch_size)?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let mut attention = Vec::new();
        let x = self.embed(&mut tape, &params, tokens);
        let ctx = self.encode(&mut tape, &params, x, &mut attention);
        let heads = self.decode_head(&mut tape, &params, ctx, &mut attention);
        Ok(ForwardPass {
            tape,
            params,
            pose: heads.pose,
            beta: heads.beta,
            camera: heads.camera,
            attention,
        })
    }

    pub fn forward_raw(&self, image: &[T]) -> Result<RawOutput<T>, RegressorError> {
        Ok(self.record(image)?.raw())
    }

    pub fn forward(&self, image: &[T]) -> Result<RegressorOutput<T>, RegressorError> {
        self.forward_raw(image)?.decode(&self.config)
    }
}
