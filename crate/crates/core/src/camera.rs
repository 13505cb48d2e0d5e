//! Pinhole projection `x = Pi_K(X + t)`, the crop-space weak-perspective
//! camera emitted by the regressor, and crop/full-image coordinate maps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vec3;
use crate::scalar::Real;

/// Minimum depth in front of the camera, meters.
pub const DEFAULT_MIN_DEPTH: f64 = 1e-4;

/// Focal length used for a 256 px crop when intrinsics are unknown.
pub const DEFAULT_FOCAL_256: f64 = 5000.0;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("points behind the camera (depth <= {min_depth}): indices {indices:?}")]
    BehindCamera { indices: Vec<usize>, min_depth: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: T,
    pub height: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: T, height: T) -> Result<Self, CameraError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Virtual camera for a square crop of `size` pixels: focal length
    /// 5000 px at 256 px, scaled linearly, principal point at the center.
    pub fn default_for_crop(size: T) -> Self {
        let f = T::lit(DEFAULT_FOCAL_256) * size / T::lit(256.0);
        let c = size * T::lit(0.5);
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: c,
            cy: c,
            width: size,
            height: size,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(CameraError::InvalidCamera("non-finite intrinsics".into()));
        }
        if self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(CameraError::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width <= T::zero() || self.height <= T::zero() {
            return Err(CameraError::InvalidCamera("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Camera translation plus intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraState<T> {
    pub translation: Vec3<T>,
    pub intrinsics: CameraIntrinsics<T>,
}

/// Per-point Jacobian of `(u, v)` with respect to the point (and, identically,
/// the translation).
pub type ProjectionJacobian<T> = [[T; 3]; 2];

fn depth_check<T: Real>(points: &[Vec3<T>], t: &Vec3<T>, min_depth: T) -> Result<(), CameraError> {
    let bad: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !(p[2] + t[2] > min_depth))
        .map(|(i, _)| i)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CameraError::BehindCamera {
            indices: bad,
            min_depth: min_depth.to_f64_lossy(),
        })
    }
}

/// Projects points to pixels. Fails if any point is within
/// [`DEFAULT_MIN_DEPTH`] of the camera plane or behind it.
pub fn project<T: Real>(points: &[Vec3<T>], camera: &CameraState<T>) -> Result<Vec<[T; 2]>, CameraError> {
    project_with_min_depth(points, camera, T::lit(DEFAULT_MIN_DEPTH))
}

pub fn project_with_min_depth<T: Real>(
    points: &[Vec3<T>],
    camera: &CameraState<T>,
    min_depth: T,
) -> Result<Vec<[T; 2]>, CameraError> {
    let t = camera.translation;
    depth_check(points, &t, min_depth)?;
    let k = &camera.intrinsics;
    Ok(points
        .iter()
        .map(|p| {
            let q = *p + t;
            [k.fx * q[0] / q[2] + k.cx, k.fy * q[1] / q[2] + k.cy]
        })
        .collect())
}

/// Projection plus the 2x3 Jacobian of each pixel. Because the projection
/// depends on `X + t`, the same Jacobian applies to the translation.
pub fn project_with_gradients<T: Real>(
    points: &[Vec3<T>],
    camera: &CameraState<T>,
) -> Result<(Vec<[T; 2]>, Vec<ProjectionJacobian<T>>), CameraError> {
    let pixels = project(points, camera)?;
    let k = &camera.intrinsics;
    let jac = points
        .iter()
        .map(|p| {
            let q = *p + camera.translation;
            let iz = T::one() / q[2];
            let iz2 = iz * iz;
            [
                [k.fx * iz, T::zero(), -k.fx * q[0] * iz2],
                [T::zero(), k.fy * iz, -k.fy * q[1] * iz2],
            ]
        })
        .collect();
    Ok((pixels, jac))
}

/// Pulls pixel cotangents back to the points; the translation cotangent is
/// their sum.
pub fn project_vjp<T: Real>(jacobians: &[ProjectionJacobian<T>], d_pixels: &[[T; 2]]) -> (Vec<Vec3<T>>, Vec3<T>) {
    let mut d_t = Vec3::zero();
    let d_points = jacobians
        .iter()
        .zip(d_pixels)
        .map(|(j, g)| {
            let d = Vec3::new(
                j[0][0] * g[0] + j[1][0] * g[1],
                j[0][1] * g[0] + j[1][1] * g[1],
                j[0][2] * g[0] + j[1][2] * g[1],
            );
            d_t += d;
            d
        })
        .collect();
    (d_points, d_t)
}

/// Crop-space weak-perspective triple to a camera translation:
/// `t = (tx, ty, 2 fx / (s b))` for crop size `b`.
pub fn weak_perspective_to_translation<T: Real>(
    s: T,
    tx: T,
    ty: T,
    crop_size: T,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<Vec3<T>, CameraError> {
    if !(s > T::zero()) || !s.is_finite() {
        return Err(CameraError::InvalidCamera(format!("scale must be positive, got {s}")));
    }
    if !(crop_size > T::zero()) {
        return Err(CameraError::InvalidCamera("crop size must be positive".into()));
    }
    Ok(Vec3::new(tx, ty, T::lit(2.0) * intrinsics.fx / (s * crop_size)))
}

/// Inverse of [`weak_perspective_to_translation`].
pub fn translation_to_weak_perspective<T: Real>(
    t: &Vec3<T>,
    crop_size: T,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<[T; 3], CameraError> {
    if !(t[2] > T::zero()) {
        return Err(CameraError::InvalidCamera("translation depth must be positive".into()));
    }
    Ok([T::lit(2.0) * intrinsics.fx / (t[2] * crop_size), t[0], t[1]])
}

/// Placement of a crop inside the full image: `full = offset + scale * crop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox<T> {
    pub offset_x: T,
    pub offset_y: T,
    pub scale_x: T,
    pub scale_y: T,
}

impl<T: Real> CropBox<T> {
    pub fn identity() -> Self {
        CropBox {
            offset_x: T::zero(),
            offset_y: T::zero(),
            scale_x: T::one(),
            scale_y: T::one(),
        }
    }

    /// Box `(x0, y0, width, height)` in the full image resampled to a crop
    /// of `crop_width x crop_height` pixels.
    pub fn from_box(
        x0: T,
        y0: T,
        width: T,
        height: T,
        crop_width: T,
        crop_height: T,
    ) -> Result<Self, CameraError> {
        if !(width > T::zero() && height > T::zero() && crop_width > T::zero() && crop_height > T::zero()) {
            return Err(CameraError::InvalidInput("degenerate crop box".into()));
        }
        Ok(CropBox {
            offset_x: x0,
            offset_y: y0,
            scale_x: width / crop_width,
            scale_y: height / crop_height,
        })
    }

    fn validate(&self) -> Result<(), CameraError> {
        let ok = self.scale_x.is_finite()
            && self.scale_y.is_finite()
            && self.scale_x.abs() > T::zero()
            && self.scale_y.abs() > T::zero()
            && self.offset_x.is_finite()
            && self.offset_y.is_finite();
        if ok {
            Ok(())
        } else {
            Err(CameraError::InvalidInput("degenerate crop box".into()))
        }
    }
}

pub fn crop_to_full_image<T: Real>(pixels: &[[T; 2]], crop: &CropBox<T>) -> Result<Vec<[T; 2]>, CameraError> {
    crop.validate()?;
    Ok(pixels
        .iter()
        .map(|p| [crop.offset_x + crop.scale_x * p[0], crop.offset_y + crop.scale_y * p[1]])
        .collect())
}

pub fn full_to_crop<T: Real>(pixels: &[[T; 2]], crop: &CropBox<T>) -> Result<Vec<[T; 2]>, CameraError> {
    crop.validate()?;
    Ok(pixels
        .iter()
        .map(|p| [(p[0] - crop.offset_x) / crop.scale_x, (p[1] - crop.offset_y) / crop.scale_y])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(t: [f64; 3], f: f64, c: f64) -> CameraState<f64> {
        CameraState {
            translation: Vec3(t),
            intrinsics: CameraIntrinsics::new(f, f, c, c, 512.0, 512.0).unwrap(),
        }
    }

    #[test]
    fn on_axis_and_similar_triangles() {
        let c = cam([0.0, 0.0, 1.0], 1000.0, 0.0);
        let px = project(&[Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0)], &c).unwrap();
        assert_eq!(px[0], [0.0, 0.0]);
        assert!((px[1][0] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_names_indices() {
        let c = cam([0.0, 0.0, 0.5], 1000.0, 0.0);
        let pts = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -0.6), Vec3::new(0.0, 0.0, -0.5)];
        match project(&pts, &c) {
            Err(CameraError::BehindCamera { indices, .. }) => assert_eq!(indices, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn closed_form_translation_derivatives() {
        let c = cam([0.1, -0.2, 2.0], 800.0, 10.0);
        let p = Vec3::new(0.3, 0.1, 0.5);
        let (_, jac) = project_with_gradients(&[p], &c).unwrap();
        let z = p[2] + 2.0;
        assert!((jac[0][0][0] - 800.0 / z).abs() < 1e-12);
        assert!((jac[0][0][2] + 800.0 * (0.3 + 0.1) / (z * z)).abs() < 1e-12);
    }

    #[test]
    fn weak_perspective_formula() {
        let k = CameraIntrinsics::<f64>::new(5000.0, 5000.0, 128.0, 128.0, 256.0, 256.0).unwrap();
        let t = weak_perspective_to_translation(1.0, 0.0, 0.0, 256.0, &k).unwrap();
        assert!((t[2] - 39.0625).abs() < 1e-12);
        let t2 = weak_perspective_to_translation(2.0, 0.0, 0.0, 256.0, &k).unwrap();
        assert!((t2[2] - t[2] / 2.0).abs() < 1e-12);
        assert!(weak_perspective_to_translation(0.0, 0.0, 0.0, 256.0, &k).is_err());
        assert!(weak_perspective_to_translation(-1.0, 0.0, 0.0, 256.0, &k).is_err());
        let back = translation_to_weak_perspective(&t2, 256.0, &k).unwrap();
        assert!((back[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn crop_maps() {
        let p = [[3.0, 4.0], [-1.0, 7.5]];
        assert_eq!(crop_to_full_image(&p, &CropBox::identity()).unwrap(), p.to_vec());
        let b = CropBox {
            offset_x: 100.0,
            offset_y: 50.0,
            scale_x: 2.0,
            scale_y: 2.0,
        };
        assert_eq!(crop_to_full_image(&[[0.0, 0.0]], &b).unwrap(), vec![[100.0, 50.0]]);
        let degenerate = CropBox {
            scale_x: 0.0,
            ..b
        };
        assert!(crop_to_full_image(&p, &degenerate).is_err());
        assert!(CropBox::from_box(0.0, 0.0, 0.0, 10.0, 256.0, 256.0).is_err());
    }

    #[test]
    fn default_intrinsics_scale_with_crop() {
        let k = CameraIntrinsics::<f64>::default_for_crop(128.0);
        assert_eq!(k.fx, 2500.0);
        assert_eq!(k.cx, 64.0);
    }
}
