//! Fixed-size 3D vectors and matrices.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec3<T>(pub [T; 3]);

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }

    pub fn from_slice(s: &[T]) -> Self {
        Vec3([s[0], s[1], s[2]])
    }

    pub fn x(&self) -> T {
        self.0[0]
    }
    pub fn y(&self) -> T {
        self.0[1]
    }
    pub fn z(&self) -> T {
        self.0[2]
    }

    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Self) -> Self {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        Vec3([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Outer product `self * o^T`.
    pub fn outer(&self, o: &Self) -> Mat3<T> {
        let mut m = Mat3::zero();
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = self.0[r] * o.0[c];
            }
        }
        m
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        Vec3(self.0.map(|v| U::lit(v.to_f64_lossy())))
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Real> IndexMut<usize> for Vec3<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3(self.0.map(|v| -v))
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.0[i] += o.0[i];
        }
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    fn sub_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.0[i] -= o.0[i];
        }
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

impl<T: Real> Mat3<T> {
    pub fn zero() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = T::one();
        }
        m
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Mat3([r0.0, r1.0, r2.0])
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::from_rows(c0, c1, c2).transpose()
    }

    pub fn diag(d: [T; 3]) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = d[i];
        }
        m
    }

    /// Skew-symmetric cross-product matrix: `skew(v) * w == v x w`.
    pub fn skew(v: &Vec3<T>) -> Self {
        let z = T::zero();
        Mat3([[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]])
    }

    /// Row-major flattening.
    pub fn to_flat(&self) -> [T; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_flat(f: &[T]) -> Self {
        Mat3([[f[0], f[1], f[2]], [f[3], f[4], f[5]], [f[6], f[7], f[8]]])
    }

    pub fn row(&self, r: usize) -> Vec3<T> {
        Vec3(self.0[r])
    }

    pub fn col(&self, c: usize) -> Vec3<T> {
        Vec3([self.0[0][c], self.0[1][c], self.0[2][c]])
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                t.0[c][r] = self.0[r][c];
            }
        }
        t
    }

    pub fn det(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn scale(&self, s: T) -> Self {
        Mat3(self.0.map(|r| r.map(|v| v * s)))
    }

    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ])
    }

    /// `self^T * v` without materializing the transpose.
    pub fn tr_mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ])
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] =
                    self.0[r][0] * o.0[0][c] + self.0[r][1] * o.0[1][c] + self.0[r][2] * o.0[2][c];
            }
        }
        out
    }

    /// Frobenius inner product.
    pub fn frob_dot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                s += self.0[r][c] * o.0[r][c];
            }
        }
        s
    }

    pub fn frob_norm(&self) -> T {
        self.frob_dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Largest deviation of `R^T R` from identity, and `|det R - 1|`.
    pub fn orthonormality_error(&self) -> (T, T) {
        let rtr = self.transpose().mul_mat(self);
        let mut worst = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { T::one() } else { T::zero() };
                worst = worst.max((rtr.0[r][c] - target).abs());
            }
        }
        (worst, (self.det() - T::one()).abs())
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        Mat3(self.0.map(|r| r.map(|v| U::lit(v.to_f64_lossy()))))
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        out += o;
        out
    }
}

impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] -= o.0[r][c];
            }
        }
        out
    }
}

impl<T: Real> AddAssign for Mat3<T> {
    fn add_assign(&mut self, o: Self) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[r][c] += o.0[r][c];
            }
        }
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.mul_mat(&o)
    }
}

impl<T: Real> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        self.mul_vec(&v)
    }
}

/// Dense row-major matrix, used for Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn set_row(&mut self, r: usize, values: &[T]) {
        self.data[r * self.cols..(r + 1) * self.cols].copy_from_slice(values);
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// Singular value decomposition `A = U diag(sigma) V^T` of a 3x3 matrix.
///
/// Singular values are sorted in decreasing order. `U` and `V` are orthogonal
/// but may carry determinant -1.
#[derive(Debug, Clone, Copy)]
pub struct Svd3<T> {
    pub u: Mat3<T>,
    pub sigma: [T; 3],
    pub v: Mat3<T>,
}

/// One-sided Jacobi SVD.
pub fn svd3<T: Real>(a: &Mat3<T>) -> Svd3<T> {
    let mut cols = [a.col(0), a.col(1), a.col(2)];
    let mut vcols = [
        Vec3::new(T::one(), T::zero(), T::zero()),
        Vec3::new(T::zero(), T::one(), T::zero()),
        Vec3::new(T::zero(), T::zero(), T::one()),
    ];
    let eps = T::epsilon();
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = cols[p].norm_squared();
            let beta = cols[q].norm_squared();
            let gamma = cols[p].dot(&cols[q]);
            if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
            let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
            let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
            let c = T::one() / (T::one() + t * t).sqrt();
            let s = c * t;
            let (bp, bq) = (cols[p], cols[q]);
            cols[p] = bp * c - bq * s;
            cols[q] = bp * s + bq * c;
            let (vp, vq) = (vcols[p], vcols[q]);
            vcols[p] = vp * c - vq * s;
            vcols[q] = vp * s + vq * c;
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = [cols[0].norm(), cols[1].norm(), cols[2].norm()];
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let sigma = [norms[order[0]], norms[order[1]], norms[order[2]]];
    let b = [cols[order[0]], cols[order[1]], cols[order[2]]];
    let v = Mat3::from_cols(vcols[order[0]], vcols[order[1]], vcols[order[2]]);

    let tiny = sigma[0] * eps * T::lit(64.0);
    let u0 = if sigma[0] > T::zero() {
        b[0].scale(T::one() / sigma[0])
    } else {
        Vec3::new(T::one(), T::zero(), T::zero())
    };
    let u1 = if sigma[1] > tiny {
        let raw = b[1].scale(T::one() / sigma[1]);
        // re-orthogonalize against u0
        let r = raw - u0.scale(u0.dot(&raw));
        r.scale(T::one() / r.norm())
    } else {
        any_orthogonal(&u0)
    };
    let mut u2 = u0.cross(&u1);
    if sigma[2] > tiny && u2.dot(&b[2]) < T::zero() {
        u2 = -u2;
    }
    Svd3 {
        u: Mat3::from_cols(u0, u1, u2),
        sigma,
        v,
    }
}

/// Some unit vector orthogonal to the unit vector `u`.
fn any_orthogonal<T: Real>(u: &Vec3<T>) -> Vec3<T> {
    let ax = [u[0].abs(), u[1].abs(), u[2].abs()];
    let e = if ax[0] <= ax[1] && ax[0] <= ax[2] {
        Vec3::new(T::one(), T::zero(), T::zero())
    } else if ax[1] <= ax[2] {
        Vec3::new(T::zero(), T::one(), T::zero())
    } else {
        Vec3::new(T::zero(), T::zero(), T::one())
    };
    let w = u.cross(&e);
    w.scale(T::one() / w.norm())
}

/// Symmetric eigen-decomposition of a 3x3 matrix via cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and eigenvectors as matrix columns.
pub fn sym_eigen3<T: Real>(a: &Mat3<T>) -> ([T; 3], Mat3<T>) {
    let mut m = a.0;
    let mut v = Mat3::<T>::identity().0;
    for _ in 0..60 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        if off <= T::epsilon() * (m[0][0].abs() + m[1][1].abs() + m[2][2].abs()) || off == T::zero()
        {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if m[p][q] == T::zero() {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (T::lit(2.0) * m[p][q]);
            let sign = if theta >= T::zero() { T::one() } else { -T::one() };
            let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (mkp, mkq) = (m[k][p], m[k][q]);
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let (mpk, mqk) = (m[p][k], m[q][k]);
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let vals = [m[0][0], m[1][1], m[2][2]];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap_or(std::cmp::Ordering::Equal));
    let vm = Mat3(v);
    (
        [vals[order[0]], vals[order[1]], vals[order[2]]],
        Mat3::from_cols(vm.col(order[0]), vm.col(order[1]), vm.col(order[2])),
    )
}

/// Solves `A x = b` for a symmetric positive definite `n x n` row-major `A`
/// by Cholesky factorization. Returns `None` if `A` is not numerically
/// positive definite.
pub fn solve_spd<T: Real>(a: &[T], n: usize, b: &[T]) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = l[i * n + k] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = l[k * n + i] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}
