//! Plane hypotheses and the homographies they induce.

use nalgebra::{Matrix3, Vector3};

use crate::camera::CameraModel;
use crate::scene::DepthRange;

/// Per-pixel PatchMatch state: z-depth and a camera-frame unit normal facing
/// the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub depth: f64,
    pub normal: Vector3<f64>,
}

impl Hypothesis {
    pub const FRONTO: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

    pub fn new(depth: f64, normal: Vector3<f64>) -> Self {
        Self { depth, normal }
    }

    pub fn fronto_parallel(depth: f64) -> Self {
        Self::new(depth, Self::FRONTO)
    }

    /// Bitwise identity, used to skip re-evaluating duplicated candidates.
    #[inline]
    pub fn same_bits(&self, other: &Hypothesis) -> bool {
        self.depth.to_bits() == other.depth.to_bits()
            && self.normal.iter().zip(other.normal.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_valid(&self, range: &DepthRange, ray: &Vector3<f64>) -> bool {
        range.contains(self.depth) && (self.normal.norm() - 1.0).abs() <= 1e-6 && self.normal.dot(ray) < 0.0
    }

    /// Spherical angles with `n = (sinθ cosφ, sinθ sinφ, -cosθ)`.
    pub fn angles(&self) -> (f64, f64) {
        let n = self.normal;
        ((-n.z).clamp(-1.0, 1.0).acos(), n.y.atan2(n.x))
    }

    pub fn normal_from_angles(theta: f64, phi: f64) -> Vector3<f64> {
        Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), -theta.cos())
    }

    /// Flips `n` to face the camera along `ray` and normalises it.
    pub fn facing(n: Vector3<f64>, ray: &Vector3<f64>) -> Option<Vector3<f64>> {
        let n = n.try_normalize(1e-12)?;
        let d = n.dot(ray);
        if d.abs() < 1e-9 {
            return None;
        }
        Some(if d > 0.0 { -n } else { n })
    }
}

/// Homography from reference pixels to source pixels induced by the plane of
/// hypothesis `h` at reference pixel `(u, v)`.
///
/// With the plane `n·X = n·X_p` and `X_s = R X + t`, every plane point
/// satisfies `-n·X / h = 1` for `h = -n·X_p > 0`, so
/// `H = K_s (R - t nᵀ / h) K_r⁻¹`.
pub fn plane_homography(
    reference: &CameraModel,
    source: &CameraModel,
    rel: &(Matrix3<f64>, Vector3<f64>),
    u: f64,
    v: f64,
    hyp: &Hypothesis,
) -> Option<Matrix3<f64>> {
    Some(HomographyBasis::new(reference, source, rel).homography(&plane_row(reference, u, v, hyp)?))
}

/// `K_r⁻ᵀ n / h`, the hypothesis-dependent factor of [`plane_homography`];
/// `None` when the plane passes through or behind the reference centre.
pub fn plane_row(reference: &CameraModel, u: f64, v: f64, hyp: &Hypothesis) -> Option<Vector3<f64>> {
    let xp = reference.backproject_camera(u, v, hyp.depth);
    let h = -hyp.normal.dot(&xp);
    if !(h > 1e-12) {
        return None;
    }
    Some(reference.k_inv().transpose() * hyp.normal / h)
}

/// The view-pair factors of [`plane_homography`]: `H = A - b mᵀ` with
/// `A = K_s R K_r⁻¹`, `b = K_s t` and `m` from [`plane_row`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyBasis {
    a: Matrix3<f64>,
    b: Vector3<f64>,
}

impl HomographyBasis {
    pub fn new(reference: &CameraModel, source: &CameraModel, (r, t): &(Matrix3<f64>, Vector3<f64>)) -> Self {
        Self {
            a: source.k * r * reference.k_inv(),
            b: source.k * t,
        }
    }

    #[inline]
    pub fn homography(&self, m: &Vector3<f64>) -> Matrix3<f64> {
        self.a - self.b * m.transpose()
    }
}

/// Row-major `f32` copy of a homography for the inner warping loop.
#[inline]
pub fn to_f32(h: &Matrix3<f64>) -> [f32; 9] {
    let mut out = [0.0f32; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = h[(r, c)] as f32;
        }
    }
    out
}

#[inline]
pub fn apply(h: &[f32; 9], x: f32, y: f32) -> (f32, f32) {
    let w = h[6] * x + h[7] * y + h[8];
    ((h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w)
}
