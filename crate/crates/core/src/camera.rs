//! Pinhole camera with world-to-camera extrinsics `x_cam = R * x_world + T`.

use nalgebra::{Matrix3, Point2, Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    k_inv: Matrix3<f64>,
}

impl CameraModel {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| Error::Validation("intrinsics matrix is singular".into()))?;
        let cam = Self {
            k,
            r,
            t,
            width,
            height,
            k_inv,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at world position `center` with rotation `r`.
    pub fn from_center(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        center: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        Self::new(k, r, -(r * center), width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.r.transpose() * self.r - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal (|R^T R - I| = {err:.3e})"
            )));
        }
        let k = &self.k;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::Validation(
                "intrinsics must be upper-triangular with K[2][2] = 1".into(),
            ));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Validation(format!(
                "image size {}x{} is below 2x2",
                self.width, self.height
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn k_inv(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    #[inline]
    pub fn world_to_camera(&self, x: &Point3<f64>) -> Vector3<f64> {
        self.r * x.coords + self.t
    }

    #[inline]
    pub fn camera_to_world(&self, x: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.r.transpose() * (x - self.t))
    }

    /// Projects a world point; returns the pixel and the camera-frame depth.
    #[inline]
    pub fn project(&self, x: &Point3<f64>) -> (Point2<f64>, f64) {
        let c = self.world_to_camera(x);
        let h = self.k * c;
        (Point2::new(h.x / h.z, h.y / h.z), c.z)
    }

    /// Camera-frame ray through pixel `(u, v)` with unit z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.k_inv * Vector3::new(u, v, 1.0)
    }

    /// Camera-frame point at z-depth `depth` on the ray through `(u, v)`.
    #[inline]
    pub fn backproject_camera(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.ray(u, v) * depth
    }

    #[inline]
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        self.camera_to_world(&self.backproject_camera(u, v, depth))
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x < self.width as f64 - 0.5
            && p.y < self.height as f64 - 0.5
    }

    /// Camera for the 2x box-downsampled image (pixel-centre convention).
    pub fn downsampled(&self) -> CameraModel {
        let mut k = self.k;
        k[(0, 0)] *= 0.5;
        k[(0, 1)] *= 0.5;
        k[(1, 1)] *= 0.5;
        k[(0, 2)] = (k[(0, 2)] + 0.5) * 0.5 - 0.5;
        k[(1, 2)] = (k[(1, 2)] + 0.5) * 0.5 - 0.5;
        let width = (self.width / 2).max(1);
        let height = (self.height / 2).max(1);
        CameraModel {
            k,
            r: self.r,
            t: self.t,
            width,
            height,
            k_inv: k.try_inverse().expect("scaled intrinsics stay invertible"),
        }
    }

    /// Relative pose mapping this camera's frame into `other`'s frame.
    pub fn relative_to(&self, other: &CameraModel) -> (Matrix3<f64>, Vector3<f64>) {
        let r = other.r * self.r.transpose();
        let t = other.t - r * self.t;
        (r, t)
    }
}

pub fn intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}
