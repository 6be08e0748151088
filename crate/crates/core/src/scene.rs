//! In-memory scene: calibrated views with auxiliary rasters and sparse points.

use nalgebra::{Point2, Point3};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Label value reserved for pixels that belong to no instance.
pub const UNLABELED: u16 = 0;

/// Maximum distance between a stored observation and the projection of its point.
pub const MAX_OBSERVATION_ERROR_PX: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct ViewBundle {
    pub name: String,
    /// Intensities in `[0, 255]`.
    pub image: Raster<f32>,
    pub segmentation: Raster<u16>,
    /// Relative depth from a monocular estimator; arbitrary units.
    pub mono_depth: Raster<f64>,
    pub camera: CameraModel,
}

impl ViewBundle {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn validate(&self) -> Result<()> {
        let dims = (self.camera.width, self.camera.height);
        for (what, got) in [
            ("image", self.image.dims()),
            ("segmentation", self.segmentation.dims()),
            ("monocular depth", self.mono_depth.dims()),
        ] {
            if got != dims {
                return Err(Error::Validation(format!(
                    "view {}: {what} is {}x{} but the camera is {}x{}",
                    self.name, got.0, got.1, dims.0, dims.1
                )));
            }
        }
        if self.mono_depth.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "view {}: monocular depth contains non-finite values",
                self.name
            )));
        }
        self.camera
            .validate()
            .map_err(|e| Error::Validation(format!("view {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub view: usize,
    pub pixel: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub position: Point3<f64>,
    pub observations: Vec<Observation>,
}

/// A sparse observation seen from one view: its pixel and camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewObservation {
    pub point: usize,
    pub pixel: Point2<f64>,
    pub depth: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparsePointSet {
    pub points: Vec<SparsePoint>,
}

impl SparsePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Observations of `view`, with depths from projecting the world positions.
    pub fn in_view(&self, view: usize, camera: &CameraModel) -> Vec<ViewObservation> {
        let mut out = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            for o in p.observations.iter().filter(|o| o.view == view) {
                let (_, depth) = camera.project(&p.position);
                out.push(ViewObservation {
                    point: i,
                    pixel: o.pixel,
                    depth,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min < max && max.is_finite()) {
            return Err(Error::Validation(format!(
                "depth range must satisfy 0 < dmin < dmax (got {min}, {max})"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.min && d <= self.max
    }

    pub fn clamp(&self, d: f64) -> f64 {
        d.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub views: Vec<ViewBundle>,
    pub sparse: SparsePointSet,
    pub depth_range: DepthRange,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::Validation(format!(
                "a scene needs at least 2 views, found {}",
                self.views.len()
            )));
        }
        DepthRange::new(self.depth_range.min, self.depth_range.max)?;
        for v in &self.views {
            v.validate()?;
        }
        for (i, p) in self.sparse.points.iter().enumerate() {
            for o in &p.observations {
                let view = self.views.get(o.view).ok_or_else(|| {
                    Error::Validation(format!(
                        "sparse point {i} references unknown view {}",
                        o.view
                    ))
                })?;
                let cam = &view.camera;
                if !cam.contains(&o.pixel) {
                    return Err(Error::Validation(format!(
                        "sparse point {i}: observation ({:.2}, {:.2}) lies outside view {}",
                        o.pixel.x, o.pixel.y, view.name
                    )));
                }
                let (proj, depth) = cam.project(&p.position);
                if !(depth > 0.0) {
                    return Err(Error::Validation(format!(
                        "sparse point {i} projects behind camera {} (depth {depth:.4})",
                        view.name
                    )));
                }
                let err = (proj - o.pixel).norm();
                if !(err <= MAX_OBSERVATION_ERROR_PX) {
                    return Err(Error::Validation(format!(
                        "sparse point {i}: observation in view {} is {err:.3} px from its projection",
                        view.name
                    )));
                }
            }
        }
        Ok(())
    }
}
