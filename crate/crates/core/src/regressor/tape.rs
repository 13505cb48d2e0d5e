//! Minimal reverse-mode differentiation over row-major matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates cotangents. Shapes are
//! internal invariants of the model, so mismatches panic.

use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Tensor { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn add_assign(&mut self, o: &Tensor<T>) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += *b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    SoftmaxRows(Var),
    Cols(Var, usize),
    ConcatCols(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

// c[n×m] += a[n×k] · b[k×m]
fn mm_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            for (o, y) in crow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += x * *y;
            }
        }
    }
}

// c[n×m] += a[n×k] · b[m×k]ᵀ
fn mm_bt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (x, y) in arow.iter().zip(brow) {
                s += *x * *y;
            }
            c[i * m + j] += s;
        }
    }
}

// c[k×m] += a[n×k]ᵀ · b[n×m]
fn mm_at_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            for (o, y) in c[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += x * *y;
            }
        }
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let y = half * x * (T::one() + th);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0) * a * x * x);
    (y, dy)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul inner dimension");
        let mut out = Tensor::zeros(x.rows, y.cols);
        mm_acc(&x.data, &y.data, &mut out.data, x.rows, x.cols, y.cols);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.cols, "matmul_bt inner dimension");
        let mut out = Tensor::zeros(x.rows, y.rows);
        mm_bt_acc(&x.data, &y.data, &mut out.data, x.rows, x.cols, y.rows);
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shapes");
        let mut out = x.clone();
        out.add_assign(y);
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1×m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((1, x.cols), y.shape(), "add_row shapes");
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols) {
            for (o, v) in row.iter_mut().zip(&y.data) {
                *o += *v;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a, s))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Row-wise layer normalization with `1×m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let m = xv.cols;
        assert_eq!((1, m), g.shape());
        assert_eq!((1, m), b.shape());
        let inv_m = T::one() / T::from_usize_lossy(m);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Vec::with_capacity(xv.data.len());
        let mut rstd = Vec::with_capacity(xv.rows);
        let mut out = Tensor::zeros(xv.rows, m);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_m;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_m;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for c in 0..m {
                let h = (row[c] - mean) * rs;
                xhat.push(h);
                out.data[r * m + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = gelu_parts(*x).0);
        self.push(out, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let m = out.cols;
        for row in out.data.chunks_mut(m) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Columns `start..start + width`.
    pub fn cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let x = self.value(a);
        assert!(start + width <= x.cols, "column slice out of range");
        let mut out = Tensor::zeros(x.rows, width);
        for r in 0..x.rows {
            out.data[r * width..(r + 1) * width].copy_from_slice(&x.row(r)[start..start + width]);
        }
        self.push(out, Op::Cols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows, rows, "concat rows");
            for r in 0..rows {
                out.data[r * cols + c0..r * cols + c0 + x.cols].copy_from_slice(x.row(r));
            }
            c0 += x.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Accumulates cotangents from `seeds` back to every node. Nodes that no
    /// seed depends on get no gradient.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Gradients<T> {
        let mut g: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        fn acc<T: Real>(g: &mut [Option<Tensor<T>>], v: Var, shape: (usize, usize)) -> &mut Tensor<T> {
            g[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
        }
        for (v, t) in seeds {
            assert_eq!(self.value(v).shape(), t.shape(), "seed shape");
            match &mut g[v.0] {
                Some(x) => x.add_assign(&t),
                slot => *slot = Some(t),
            }
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (x.rows, x.cols, y.cols);
                    mm_bt_acc(&dy.data, &y.data, &mut acc(&mut g, *a, x.shape()).data, n, m, k);
                    mm_at_acc(&x.data, &dy.data, &mut acc(&mut g, *b, y.shape()).data, n, k, m);
                }
                Op::MatMulBt(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (x.rows, x.cols, y.rows);
                    mm_acc(&dy.data, &y.data, &mut acc(&mut g, *a, x.shape()).data, n, m, k);
                    mm_at_acc(&dy.data, &x.data, &mut acc(&mut g, *b, y.shape()).data, n, m, k);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, dy.shape()).add_assign(&dy);
                    acc(&mut g, *b, dy.shape()).add_assign(&dy);
                }
                Op::AddRow(a, b) => {
                    acc(&mut g, *a, dy.shape()).add_assign(&dy);
                    let gb = acc(&mut g, *b, (1, dy.cols));
                    for row in dy.data.chunks(dy.cols) {
                        for (o, v) in gb.data.iter_mut().zip(row) {
                            *o += *v;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut g, *a, dy.shape());
                    for (o, v) in ga.data.iter_mut().zip(&dy.data) {
                        *o += *s * *v;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let m = dy.cols;
                    let gv = &self.value(*gamma).data;
                    let inv_m = T::one() / T::from_usize_lossy(m);
                    let mut dx = Tensor::zeros(dy.rows, m);
                    {
                        let gg = acc(&mut g, *gamma, (1, m));
                        for r in 0..dy.rows {
                            for c in 0..m {
                                gg.data[c] += dy.data[r * m + c] * xhat[r * m + c];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut g, *beta, (1, m));
                        for r in 0..dy.rows {
                            for c in 0..m {
                                gb.data[c] += dy.data[r * m + c];
                            }
                        }
                    }
                    for r in 0..dy.rows {
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for c in 0..m {
                            let d = dy.data[r * m + c] * gv[c];
                            s1 += d;
                            s2 += d * xhat[r * m + c];
                        }
                        s1 *= inv_m;
                        s2 *= inv_m;
                        for c in 0..m {
                            let d = dy.data[r * m + c] * gv[c];
                            dx.data[r * m + c] = rstd[r] * (d - s1 - xhat[r * m + c] * s2);
                        }
                    }
                    acc(&mut g, *x, dx.shape()).add_assign(&dx);
                }
                Op::Gelu(a) => {
                    let xs = &self.value(*a).data;
                    let ga = acc(&mut g, *a, dy.shape());
                    for ((o, v), x) in ga.data.iter_mut().zip(&dy.data).zip(xs) {
                        *o += *v * gelu_parts(*x).1;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let m = y.cols;
                    let ga = acc(&mut g, *a, dy.shape());
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let dr = dy.row(r);
                        let dot: T = yr.iter().zip(dr).map(|(p, q)| *p * *q).sum();
                        for c in 0..m {
                            ga.data[r * m + c] += yr[c] * (dr[c] - dot);
                        }
                    }
                }
                Op::Cols(a, start) => {
                    let shape = self.value(*a).shape();
                    let ga = acc(&mut g, *a, shape);
                    for r in 0..dy.rows {
                        for (o, v) in ga.data[r * shape.1 + start..].iter_mut().zip(dy.row(r)) {
                            *o += *v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let shape = self.value(*p).shape();
                        let gp = acc(&mut g, *p, shape);
                        for r in 0..dy.rows {
                            for (o, v) in gp.data[r * shape.1..(r + 1) * shape.1]
                                .iter_mut()
                                .zip(&dy.row(r)[c0..c0 + shape.1])
                            {
                                *o += *v;
                            }
                        }
                        c0 += shape.1;
                    }
                }
            }
            g[i] = Some(dy);
        }
        Gradients(g)
    }
}

/// Cotangents indexed by [`Var`].
pub struct Gradients<T>(Vec<Option<Tensor<T>>>);

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.0[v.0].take()
    }
}
