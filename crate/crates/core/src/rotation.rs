//! Rotation parameterizations: axis-angle (Rodrigues), the continuous 6D
//! representation, and their derivatives.

use thiserror::Error;

use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum RotationError {
    #[error("invalid input: axis-angle contains non-finite values")]
    NonFinite,
}

/// Below this angle Rodrigues' formula is replaced by its second-order expansion.
pub const RODRIGUES_TAYLOR_THRESHOLD: f64 = 1e-8;

// Below this angle the Jacobian coefficients use their power series.
const SERIES_THRESHOLD: f64 = 1e-2;

/// Axis-angle vector to rotation matrix.
pub fn rodrigues<T: Real>(v: &Vec3<T>) -> Result<Mat3<T>, RotationError> {
    if !v.is_finite() {
        return Err(RotationError::NonFinite);
    }
    Ok(rodrigues_unchecked(v))
}

pub(crate) fn rodrigues_unchecked<T: Real>(v: &Vec3<T>) -> Mat3<T> {
    let theta = v.norm();
    let k = Mat3::skew(v);
    let k2 = k.mul_mat(&k);
    let (a, b) = if theta < T::lit(RODRIGUES_TAYLOR_THRESHOLD) {
        (T::one(), T::lit(0.5))
    } else {
        let half = (theta * T::lit(0.5)).sin();
        (theta.sin() / theta, T::lit(2.0) * half * half / (theta * theta))
    };
    Mat3::identity() + k.scale(a) + k2.scale(b)
}

/// Partial derivatives `dR/dv_i` of [`rodrigues`], one matrix per component.
pub fn rodrigues_jacobian<T: Real>(v: &Vec3<T>) -> [Mat3<T>; 3] {
    let theta = v.norm();
    let t2 = theta * theta;
    let (a, b, ca, cb) = if theta < T::lit(SERIES_THRESHOLD) {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            T::one() - t2 / T::lit(6.0) + t4 / T::lit(120.0) - t6 / T::lit(5040.0),
            T::lit(0.5) - t2 / T::lit(24.0) + t4 / T::lit(720.0) - t6 / T::lit(40320.0),
            T::lit(-1.0 / 3.0) + t2 / T::lit(30.0) - t4 / T::lit(840.0) + t6 / T::lit(45360.0),
            T::lit(-1.0 / 12.0) + t2 / T::lit(180.0) - t4 / T::lit(6720.0)
                + t6 / T::lit(453600.0),
        )
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        let half = (theta * T::lit(0.5)).sin();
        let one_minus_cos = T::lit(2.0) * half * half;
        (
            s / theta,
            one_minus_cos / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - T::lit(2.0) * one_minus_cos) / (t2 * t2),
        )
    };
    let k = Mat3::skew(v);
    let k2 = k.mul_mat(&k);
    let mut out = [Mat3::zero(); 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut e = Vec3::zero();
        e[i] = T::one();
        let ei = Mat3::skew(&e);
        *slot = k.scale(ca * v[i])
            + ei.scale(a)
            + k2.scale(cb * v[i])
            + (ei.mul_mat(&k) + k.mul_mat(&ei)).scale(b);
    }
    out
}

/// Pulls a cotangent on the rotation matrix back to the axis-angle vector.
pub fn rodrigues_vjp<T: Real>(v: &Vec3<T>, d_rot: &Mat3<T>) -> Vec3<T> {
    let jac = rodrigues_jacobian(v);
    Vec3([
        jac[0].frob_dot(d_rot),
        jac[1].frob_dot(d_rot),
        jac[2].frob_dot(d_rot),
    ])
}

/// Rotation matrix to axis-angle with angle in `[0, pi]`.
pub fn axis_angle_from_matrix<T: Real>(r: &Mat3<T>) -> Vec3<T> {
    let q = quaternion_from_matrix(r);
    let (w, qv) = if q[0] < T::zero() {
        (-q[0], Vec3::new(-q[1], -q[2], -q[3]))
    } else {
        (q[0], Vec3::new(q[1], q[2], q[3]))
    };
    let n = qv.norm();
    if n < T::lit(1e-12) {
        return qv.scale(T::lit(2.0) / w);
    }
    let angle = T::lit(2.0) * n.atan2(w);
    qv.scale(angle / n)
}

/// Unit quaternion `(w, x, y, z)` from a rotation matrix (Shepperd's method).
fn quaternion_from_matrix<T: Real>(r: &Mat3<T>) -> [T; 4] {
    let m = &r.0;
    let tr = r.trace();
    let one = T::one();
    let quarter = T::lit(0.25);
    let q = if tr > m[0][0] && tr > m[1][1] && tr > m[2][2] {
        let s = (one + tr).sqrt() * T::lit(2.0);
        [
            quarter * s,
            (m[2][1] - m[1][2]) / s,
            (m[0][2] - m[2][0]) / s,
            (m[1][0] - m[0][1]) / s,
        ]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
        [
            (m[2][1] - m[1][2]) / s,
            quarter * s,
            (m[0][1] + m[1][0]) / s,
            (m[0][2] + m[2][0]) / s,
        ]
    } else if m[1][1] > m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
        [
            (m[0][2] - m[2][0]) / s,
            (m[0][1] + m[1][0]) / s,
            quarter * s,
            (m[1][2] + m[2][1]) / s,
        ]
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
        [
            (m[1][0] - m[0][1]) / s,
            (m[0][2] + m[2][0]) / s,
            (m[1][2] + m[2][1]) / s,
            quarter * s,
        ]
    };
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    q.map(|x| x / n)
}

/// Geodesic angle between two rotations, radians.
pub fn geodesic_distance<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    axis_angle_from_matrix(&a.transpose().mul_mat(b)).norm()
}

/// 6D encoding of the identity rotation.
pub fn identity_6d<T: Real>() -> [T; 6] {
    let (o, z) = (T::one(), T::zero());
    [o, z, z, z, o, z]
}

/// Continuous 6D representation to rotation matrix by Gram-Schmidt.
///
/// The input holds the first two (unnormalized) columns.
pub fn sixd_to_matrix<T: Real>(a: &[T]) -> Mat3<T> {
    sixd_forward(a).rot
}

/// First two columns of a rotation, the inverse of [`sixd_to_matrix`].
pub fn matrix_to_sixd<T: Real>(r: &Mat3<T>) -> [T; 6] {
    let (c0, c1) = (r.col(0), r.col(1));
    [c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]]
}

struct SixdForward<T> {
    rot: Mat3<T>,
    b1: Vec3<T>,
    b2: Vec3<T>,
    a2: Vec3<T>,
    n1: T,
    nu: T,
}

fn sixd_forward<T: Real>(a: &[T]) -> SixdForward<T> {
    let a1 = Vec3::new(a[0], a[1], a[2]);
    let a2 = Vec3::new(a[3], a[4], a[5]);
    let tiny = T::lit(1e-12);
    let n1 = a1.norm();
    let b1 = if n1 > tiny {
        a1.scale(T::one() / n1)
    } else {
        Vec3::new(T::one(), T::zero(), T::zero())
    };
    let u = a2 - b1.scale(b1.dot(&a2));
    let nu = u.norm();
    let b2 = if nu > tiny {
        u.scale(T::one() / nu)
    } else {
        // any direction orthogonal to b1
        let e = if b1[0].abs() < T::lit(0.9) {
            Vec3::new(T::one(), T::zero(), T::zero())
        } else {
            Vec3::new(T::zero(), T::one(), T::zero())
        };
        let w = e - b1.scale(b1.dot(&e));
        w.scale(T::one() / w.norm())
    };
    let b3 = b1.cross(&b2);
    SixdForward {
        rot: Mat3::from_cols(b1, b2, b3),
        b1,
        b2,
        a2,
        n1,
        nu,
    }
}

/// Pulls a cotangent on the rotation matrix back to the 6D input.
pub fn sixd_vjp<T: Real>(a: &[T], d_rot: &Mat3<T>) -> [T; 6] {
    let f = sixd_forward(a);
    let tiny = T::lit(1e-12);
    if f.n1 <= tiny || f.nu <= tiny {
        return [T::zero(); 6];
    }
    let (g1, g2, g3) = (d_rot.col(0), d_rot.col(1), d_rot.col(2));
    let mut db1 = g1 + f.b2.cross(&g3);
    let db2 = g2 + g3.cross(&f.b1);
    let du = (db2 - f.b2.scale(f.b2.dot(&db2))).scale(T::one() / f.nu);
    let da2 = du - f.b1.scale(f.b1.dot(&du));
    let proj = f.b1.dot(&f.a2);
    db1 -= du.scale(proj) + f.a2.scale(f.b1.dot(&du));
    let da1 = (db1 - f.b1.scale(f.b1.dot(&db1))).scale(T::one() / f.n1);
    [da1[0], da1[1], da1[2], da2[0], da2[1], da2[2]]
}
