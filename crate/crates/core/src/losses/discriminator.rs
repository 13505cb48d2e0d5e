//! Small MLP discriminators over shape, full pose and single joint
//! rotations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Mat3;
use crate::scalar::Real;

/// Fully connected network with `tanh` hidden activations and a linear
/// scalar output. Parameters are stored flat, layer by layer, each layer as
/// its `out x in` row-major weight followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    /// Input, then the post-activation output of every layer.
    activations: Vec<Vec<T>>,
}

impl<T: Real> Mlp<T> {
    /// Layer widths `[input, hidden..., 1]`, Xavier-uniform weights and
    /// zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2 && *sizes.last().unwrap() == 1);
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(T::lit(rng.gen_range(-limit..limit)));
            }
            params.extend(std::iter::repeat(T::zero()).take(fan_out));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    /// A network that outputs `value` for every input.
    pub fn constant(sizes: &[usize], value: T) -> Self {
        let mut params = vec![T::zero(); Self::count(sizes)];
        *params.last_mut().unwrap() = value;
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn forward(&self, x: &[T]) -> (T, MlpTrace<T>) {
        assert_eq!(x.len(), self.input_dim(), "discriminator input size");
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let input = acts.last().unwrap();
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut out: Vec<T> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(input).map(|(a, b)| *a * *b).sum::<T>() + bias[o]
                })
                .collect();
            if l + 1 < layers {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        let y = acts.last().unwrap()[0];
        (y, MlpTrace { activations: acts })
    }

    pub fn score(&self, x: &[T]) -> T {
        self.forward(x).0
    }

    /// Backward pass for an output cotangent `dy`. Accumulates into
    /// `d_params` when given and returns the input cotangent.
    pub fn backward(&self, trace: &MlpTrace<T>, dy: T, mut d_params: Option<&mut [T]>) -> Vec<T> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut grad = vec![dy];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                let a = &trace.activations[l + 1];
                for (g, y) in grad.iter_mut().zip(a) {
                    *g *= T::one() - *y * *y;
                }
            }
            let input = &trace.activations[l];
            let off = offsets[l];
            if let Some(dp) = d_params.as_deref_mut() {
                for o in 0..n_out {
                    for i in 0..n_in {
                        dp[off + o * n_in + i] += grad[o] * input[i];
                    }
                    dp[off + n_in * n_out + o] += grad[o];
                }
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut next = vec![T::zero(); n_in];
            for o in 0..n_out {
                for i in 0..n_in {
                    next[i] += weights[o * n_in + i] * grad[o];
                }
            }
            grad = next;
        }
        grad
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            params: self.params.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Which discriminator of the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorKind {
    Shape,
    Pose,
    /// Articulated joint `j` in `1..J`.
    Joint(usize),
}

/// `J + 1` discriminators: shape, full articulated pose, and one per
/// articulated joint. Pose inputs are local rotation matrices flattened
/// row-major; the root (global orientation) is never scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorBank<T> {
    pub shape: Mlp<T>,
    pub pose: Mlp<T>,
    pub joints: Vec<Mlp<T>>,
}

/// A (pose, shape) pair fed to the bank. `rotations` holds all `J` local
/// rotations, root first.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSample<T> {
    pub rotations: Vec<Mat3<T>>,
    pub beta: Vec<T>,
}

/// Cotangents of a bank evaluation with respect to its input.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCotangent<T> {
    pub rotations: Vec<Mat3<T>>,
    pub beta: Vec<T>,
}

impl<T: Real> DiscriminatorBank<T> {
    pub fn new(num_joints: usize, num_shape: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        assert!(num_joints >= 2);
        let shape = Mlp::new(&[num_shape, hidden, hidden, 1], rng);
        let pose = Mlp::new(&[9 * (num_joints - 1), hidden, hidden, 1], rng);
        let joints = (1..num_joints).map(|_| Mlp::new(&[9, hidden, 1], rng)).collect();
        DiscriminatorBank { shape, pose, joints }
    }

    /// Every discriminator outputs `value` regardless of input.
    pub fn constant(num_joints: usize, num_shape: usize, hidden: usize, value: T) -> Self {
        DiscriminatorBank {
            shape: Mlp::constant(&[num_shape, hidden, hidden, 1], value),
            pose: Mlp::constant(&[9 * (num_joints - 1), hidden, hidden, 1], value),
            joints: (1..num_joints).map(|_| Mlp::constant(&[9, hidden, 1], value)).collect(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len() + 1
    }

    pub fn num_shape(&self) -> usize {
        self.shape.input_dim()
    }

    /// `J + 1`.
    pub fn len(&self) -> usize {
        self.joints.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kinds(&self) -> Vec<DiscriminatorKind> {
        let mut k = vec![DiscriminatorKind::Shape, DiscriminatorKind::Pose];
        k.extend((1..self.num_joints()).map(DiscriminatorKind::Joint));
        k
    }

    pub fn get(&self, kind: DiscriminatorKind) -> &Mlp<T> {
        match kind {
            DiscriminatorKind::Shape => &self.shape,
            DiscriminatorKind::Pose => &self.pose,
            DiscriminatorKind::Joint(j) => &self.joints[j - 1],
        }
    }

    pub fn get_mut(&mut self, kind: DiscriminatorKind) -> &mut Mlp<T> {
        match kind {
            DiscriminatorKind::Shape => &mut self.shape,
            DiscriminatorKind::Pose => &mut self.pose,
            DiscriminatorKind::Joint(j) => &mut self.joints[j - 1],
        }
    }

    /// Input vector of one discriminator.
    pub fn input(&self, kind: DiscriminatorKind, sample: &PriorSample<T>) -> Vec<T> {
        match kind {
            DiscriminatorKind::Shape => sample.beta.clone(),
            DiscriminatorKind::Pose => sample.rotations[1..].iter().flat_map(|r| r.to_flat()).collect(),
            DiscriminatorKind::Joint(j) => sample.rotations[j].to_flat().to_vec(),
        }
    }

    /// Adds the cotangent of one discriminator's input vector into `out`.
    pub fn accumulate_input_cotangent(&self, kind: DiscriminatorKind, d_input: &[T], out: &mut PriorCotangent<T>) {
        match kind {
            DiscriminatorKind::Shape => {
                for (o, d) in out.beta.iter_mut().zip(d_input) {
                    *o += *d;
                }
            }
            DiscriminatorKind::Pose => {
                for (j, chunk) in d_input.chunks(9).enumerate() {
                    out.rotations[j + 1] += Mat3::from_flat(chunk);
                }
            }
            DiscriminatorKind::Joint(j) => out.rotations[j] += Mat3::from_flat(d_input),
        }
    }

    /// All `J + 1` scores in [`Self::kinds`] order.
    pub fn scores(&self, sample: &PriorSample<T>) -> Vec<T> {
        self.kinds()
            .into_iter()
            .map(|k| self.get(k).score(&self.input(k, sample)))
            .collect()
    }

    /// Pulls per-discriminator output cotangents back to the input sample.
    /// `d_scores` follows [`Self::kinds`] order.
    pub fn input_vjp(&self, sample: &PriorSample<T>, d_scores: &[T]) -> PriorCotangent<T> {
        let mut out = PriorCotangent {
            rotations: vec![Mat3::zero(); sample.rotations.len()],
            beta: vec![T::zero(); sample.beta.len()],
        };
        for (k, d) in self.kinds().into_iter().zip(d_scores) {
            let net = self.get(k);
            let (_, trace) = net.forward(&self.input(k, sample));
            let dx = net.backward(&trace, *d, None);
            self.accumulate_input_cotangent(k, &dx, &mut out);
        }
        out
    }

    /// Zeroed parameter-gradient buffers, one per discriminator in
    /// [`Self::kinds`] order.
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.kinds()
            .into_iter()
            .map(|k| vec![T::zero(); self.get(k).params().len()])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> DiscriminatorBank<U> {
        DiscriminatorBank {
            shape: self.shape.cast(),
            pose: self.pose.cast(),
            joints: self.joints.iter().map(|m| m.cast()).collect(),
        }
    }
}
