//! Geometric-consistency fusion of per-view depth maps into a point cloud.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::io::CloudPoint;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Number of other views that must agree with a pixel.
    pub min_consistent_views: usize,
    /// Maximum relative depth disagreement.
    pub depth_tolerance: f64,
    /// Maximum forward-backward reprojection distance in pixels.
    pub reprojection_tolerance: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            min_consistent_views: 2,
            depth_tolerance: 0.01,
            reprojection_tolerance: 2.0,
        }
    }
}

pub struct FusionView<'a> {
    pub depth: &'a Raster<f32>,
    /// Unit normals in the camera frame.
    pub normal: &'a Raster<[f32; 3]>,
    pub camera: &'a CameraModel,
    pub image: Option<&'a Raster<f32>>,
}

#[inline]
fn valid(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

/// Every pixel whose back-projection is confirmed by enough other views yields
/// one point, averaged over itself and the agreeing samples.
pub fn export_point_cloud(views: &[FusionView], params: &FusionParams) -> Vec<CloudPoint> {
    let per_view: Vec<Vec<CloudPoint>> = (0..views.len())
        .into_par_iter()
        .map(|ref_idx| fuse_view(views, ref_idx, params))
        .collect();
    per_view.into_iter().flatten().collect()
}

fn fuse_view(views: &[FusionView], ref_idx: usize, params: &FusionParams) -> Vec<CloudPoint> {
    let rv = &views[ref_idx];
    let cam = rv.camera;
    let mut out = Vec::new();
    for y in 0..rv.depth.height() {
        for x in 0..rv.depth.width() {
            let d = *rv.depth.at(x, y);
            if !valid(d) {
                continue;
            }
            let world = cam.backproject(x as f64, y as f64, d as f64);
            let n0 = rv.normal.at(x, y);
            let mut sum_pos = world.coords;
            let mut sum_normal = cam.r.transpose() * Vector3::new(n0[0] as f64, n0[1] as f64, n0[2] as f64);
            let mut sum_color = rv.image.map_or(0.0, |im| *im.at(x, y) as f64);
            let mut agree = 0usize;
            for (j, sv) in views.iter().enumerate() {
                if j == ref_idx {
                    continue;
                }
                let (p, z) = sv.camera.project(&world);
                if z <= 0.0 || !sv.camera.contains(&p) {
                    continue;
                }
                let sx = (p.x.round() as usize).min(sv.depth.width() - 1);
                let sy = (p.y.round() as usize).min(sv.depth.height() - 1);
                let sd = *sv.depth.at(sx, sy);
                if !valid(sd) {
                    continue;
                }
                let back = sv.camera.backproject(sx as f64, sy as f64, sd as f64);
                let (q, _) = cam.project(&back);
                let reproj = ((q.x - x as f64).powi(2) + (q.y - y as f64).powi(2)).sqrt();
                let rel = ((sd as f64 - z) / z).abs();
                if reproj <= params.reprojection_tolerance && rel <= params.depth_tolerance {
                    agree += 1;
                    sum_pos += back.coords;
                    let n = sv.normal.at(sx, sy);
                    sum_normal += sv.camera.r.transpose()
                        * Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
                    sum_color += sv.image.map_or(0.0, |im| *im.at(sx, sy) as f64);
                }
            }
            if agree >= params.min_consistent_views {
                let k = (agree + 1) as f64;
                let pos = Point3::from(sum_pos / k);
                let normal = sum_normal.try_normalize(1e-12).unwrap_or_else(Vector3::zeros);
                let gray = (sum_color / k).round().clamp(0.0, 255.0) as u8;
                out.push(CloudPoint {
                    position: [pos.x as f32, pos.y as f32, pos.z as f32],
                    normal: [normal.x as f32, normal.y as f32, normal.z as f32],
                    color: [gray; 3],
                });
            }
        }
    }
    out
}
