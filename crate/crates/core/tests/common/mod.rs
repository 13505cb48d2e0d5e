#![allow(dead_code)]

use handmesh::linalg::{Mat3, Vec3};
use rand::Rng;

/// Relative error between an analytic and a finite-difference vector:
/// `||a - b|| / max(||a||, ||b||)`, or the absolute difference when both are
/// below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of a vector function, one column per input.
pub fn central_jacobian(
    x: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect());
    }
    cols
}

pub fn random_vec3(rng: &mut impl Rng, scale: f64) -> Vec3<f64> {
    Vec3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

/// Rotation from axis-angle through the unit quaternion (independent of
/// the library's Rodrigues implementation).
pub fn quat_rotation(v: &[f64]) -> [[f64; 3]; 3] {
    let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if angle == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let s = (angle / 2.0).sin() / angle;
    let (w, x, y, z) = ((angle / 2.0).cos(), v[0] * s, v[1] * s, v[2] * s);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn random_rotation(rng: &mut impl Rng) -> Mat3<f64> {
    let v = random_vec3(rng, 1.0);
    let v = v.scale(rng.gen_range(0.0..std::f64::consts::PI) / v.norm());
    Mat3(quat_rotation(&v.0))
}

pub fn max_abs_diff(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs()))
        .fold(0.0, f64::max)
}
