//! Synthetic piecewise-planar scenes with exact ground truth.
//!
//! Surfaces are axis-aligned rectangles on world planes `z = depth`. Cameras
//! share the identity rotation, so every surface is fronto-parallel in every
//! view and ground-truth depth is constant per surface. View 0 sits at the
//! origin and the remaining views are spread on a ring in the `z = 0` plane.

use std::f64::consts::TAU;

use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{intrinsics, CameraModel};
use crate::error::{Error, Result};
use crate::io::INVALID_DEPTH;
use crate::raster::Raster;
use crate::scene::{
    DepthRange, Observation, SceneBundle, SparsePoint, SparsePointSet, ViewBundle, UNLABELED,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    /// Constant intensity.
    Flat { intensity: f32 },
    /// Bilinear value noise anchored to world coordinates.
    Noise {
        /// Lattice cells per world unit.
        density: f64,
        /// Half-amplitude around mid-gray.
        contrast: f32,
    },
}

impl Texture {
    pub fn is_textured(&self) -> bool {
        matches!(self, Texture::Noise { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub label: u16,
    pub depth: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub texture: Texture,
}

impl Surface {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_range.0 && x <= self.x_range.1 && y >= self.y_range.0 && y <= self.y_range.1
    }

    fn area(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) * (self.y_range.1 - self.y_range.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonoDistortion {
    /// `D = a * d_gt + b` for every labelled pixel.
    Affine { a: f64, b: f64 },
    /// One `(a, b)` pair per surface, in surface order.
    PerInstance(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub views: usize,
    pub focal: f64,
    pub ring_radius: f64,
    pub surfaces: Vec<Surface>,
    /// Total number of sparse points.
    pub sparse_count: usize,
    /// Points placed near the corners of each untextured surface, counted in `sparse_count`.
    pub untextured_anchors: usize,
    pub mono: MonoDistortion,
    pub depth_range: Option<(f64, f64)>,
    /// Supersampling factor per axis when shading intensities.
    pub supersample: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Textured back wall with a textureless rectangle in front of it.
    pub fn two_plane(width: usize, height: usize, views: usize) -> Self {
        let scale = width as f64 / 640.0;
        Self {
            width,
            height,
            views,
            focal: 500.0 * scale,
            ring_radius: 0.25,
            surfaces: vec![
                Surface {
                    label: 1,
                    depth: 4.0,
                    x_range: (-6.0, 6.0),
                    y_range: (-5.0, 5.0),
                    texture: Texture::Noise {
                        density: 10.0 * scale,
                        contrast: 90.0,
                    },
                },
                Surface {
                    label: 2,
                    depth: 2.0,
                    x_range: (-0.55, 0.5),
                    y_range: (-0.4, 0.38),
                    texture: Texture::Flat { intensity: 150.0 },
                },
            ],
            sparse_count: 120,
            untextured_anchors: 8,
            mono: MonoDistortion::Affine { a: 0.5, b: 1.0 },
            depth_range: Some((1.5, 5.0)),
            supersample: 2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: SceneBundle,
    /// Ground-truth camera depth per view; [`INVALID_DEPTH`] where no surface is hit.
    pub gt_depth: Vec<Raster<f32>>,
}

fn lattice_value(seed: u64, label: u16, i: i64, j: i64) -> f64 {
    // splitmix64 finaliser over the lattice coordinate
    let mut z = seed
        ^ (label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (i as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (j as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn shade(surface: &Surface, seed: u64, x: f64, y: f64) -> f64 {
    match surface.texture {
        Texture::Flat { intensity } => intensity as f64,
        Texture::Noise { density, contrast } => {
            let gx = x * density;
            let gy = y * density;
            let i = gx.floor();
            let j = gy.floor();
            // quintic fade keeps the shading C2, so Laplacians are well defined
            let fade = |t: f64| t * t * t * (t * (6.0 * t - 15.0) + 10.0);
            let fx = fade(gx - i);
            let fy = fade(gy - j);
            let (i, j) = (i as i64, j as i64);
            let v = |a: i64, b: i64| lattice_value(seed, surface.label, a, b);
            let top = v(i, j) * (1.0 - fx) + v(i + 1, j) * fx;
            let bottom = v(i, j + 1) * (1.0 - fx) + v(i + 1, j + 1) * fx;
            let n = top * (1.0 - fy) + bottom * fy;
            128.0 + contrast as f64 * (2.0 * n - 1.0)
        }
    }
}

struct Renderer<'a> {
    spec: &'a SynthSpec,
}

impl Renderer<'_> {
    /// Nearest surface hit along the ray through continuous pixel `(u, v)`.
    fn hit(&self, cam: &CameraModel, u: f64, v: f64) -> Option<(usize, f64, f64, f64)> {
        let c = cam.center();
        let ray = cam.r.transpose() * cam.ray(u, v);
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for (si, s) in self.spec.surfaces.iter().enumerate() {
            let t = (s.depth - c.z) / ray.z;
            if !(t > 0.0) {
                continue;
            }
            let x = c.x + t * ray.x;
            let y = c.y + t * ray.y;
            if s.contains(x, y) && best.map_or(true, |b| s.depth - c.z < b.1) {
                best = Some((si, s.depth - c.z, x, y));
            }
        }
        best
    }
}

fn validate(spec: &SynthSpec) -> Result<()> {
    let bad = |m: String| Err(Error::Parameter(m));
    if spec.views < 2 {
        return bad("synthetic scenes need at least 2 views".into());
    }
    if spec.width < 2 || spec.height < 2 || spec.supersample == 0 {
        return bad("image must be at least 2x2 with supersample >= 1".into());
    }
    for (i, a) in spec.surfaces.iter().enumerate() {
        if a.label == UNLABELED {
            return bad(format!("surface {i} uses the reserved label 0"));
        }
        if !(a.depth > 0.0) || a.x_range.0 >= a.x_range.1 || a.y_range.0 >= a.y_range.1 {
            return bad(format!("surface {i} has a non-positive depth or empty extent"));
        }
        for (j, b) in spec.surfaces.iter().enumerate().skip(i + 1) {
            if a.label == b.label {
                return bad(format!("surfaces {i} and {j} share label {}", a.label));
            }
            let overlap = a.x_range.0 < b.x_range.1
                && b.x_range.0 < a.x_range.1
                && a.y_range.0 < b.y_range.1
                && b.y_range.0 < a.y_range.1;
            if overlap && a.depth == b.depth {
                return bad(format!(
                    "surfaces {i} and {j} overlap at the same depth; the front face is ambiguous"
                ));
            }
        }
    }
    if let MonoDistortion::PerInstance(p) = &spec.mono {
        if p.len() != spec.surfaces.len() {
            return bad("per-instance mono distortion needs one (a, b) per surface".into());
        }
    }
    Ok(())
}

fn mono_of(spec: &SynthSpec, surface: usize, depth: f64) -> f64 {
    match &spec.mono {
        MonoDistortion::Affine { a, b } => a * depth + b,
        MonoDistortion::PerInstance(p) => p[surface].0 * depth + p[surface].1,
    }
}

pub fn generate_synthetic_scene(spec: &SynthSpec) -> Result<SynthScene> {
    validate(spec)?;
    let r = nalgebra::Matrix3::identity();
    let k = intrinsics(
        spec.focal,
        spec.focal,
        (spec.width as f64 - 1.0) / 2.0,
        (spec.height as f64 - 1.0) / 2.0,
    );
    let renderer = Renderer { spec };
    let mut views = Vec::with_capacity(spec.views);
    let mut gt_depth = Vec::with_capacity(spec.views);
    let far = spec
        .surfaces
        .iter()
        .enumerate()
        .map(|(i, s)| mono_of(spec, i, s.depth))
        .fold(0.0f64, f64::max);
    for vi in 0..spec.views {
        let center = if vi == 0 {
            Vector3::zeros()
        } else {
            let a = TAU * (vi - 1) as f64 / (spec.views - 1) as f64;
            Vector3::new(spec.ring_radius * a.cos(), spec.ring_radius * a.sin(), 0.0)
        };
        let cam = CameraModel::from_center(k, r, center, spec.width, spec.height)?;
        let (w, h) = (spec.width, spec.height);
        let mut image = Raster::filled(w, h, 0.0f32);
        let mut seg = Raster::filled(w, h, UNLABELED);
        let mut depth = Raster::filled(w, h, INVALID_DEPTH);
        let mut mono = Raster::filled(w, h, far);
        let ss = spec.supersample;
        for y in 0..h {
            for x in 0..w {
                if let Some((si, d, _, _)) = renderer.hit(&cam, x as f64, y as f64) {
                    *seg.at_mut(x, y) = spec.surfaces[si].label;
                    *depth.at_mut(x, y) = d as f32;
                    *mono.at_mut(x, y) = mono_of(spec, si, d);
                }
                let mut acc = 0.0;
                for sy in 0..ss {
                    for sx in 0..ss {
                        let u = x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5;
                        let v = y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5;
                        if let Some((si, _, wx, wy)) = renderer.hit(&cam, u, v) {
                            acc += shade(&spec.surfaces[si], spec.seed, wx, wy);
                        }
                    }
                }
                *image.at_mut(x, y) = (acc / (ss * ss) as f64) as f32;
            }
        }
        views.push(ViewBundle {
            name: format!("view{vi:02}"),
            image,
            segmentation: seg,
            mono_depth: mono,
            camera: cam,
        });
        gt_depth.push(depth);
    }

    let sparse = sample_sparse(spec, &renderer, &views)?;
    let depth_range = match spec.depth_range {
        Some((lo, hi)) => DepthRange::new(lo, hi)?,
        None => {
            let lo = spec.surfaces.iter().map(|s| s.depth).fold(f64::INFINITY, f64::min);
            let hi = spec.surfaces.iter().map(|s| s.depth).fold(0.0, f64::max);
            DepthRange::new(lo * 0.75, hi * 1.25)?
        }
    };
    let scene = SceneBundle {
        views,
        sparse,
        depth_range,
    };
    scene.validate()?;
    Ok(SynthScene { scene, gt_depth })
}

/// Observations of a world point on surface `si` in every view that sees it unoccluded.
fn observe(
    renderer: &Renderer,
    views: &[ViewBundle],
    si: usize,
    label: u16,
    x: &Point3<f64>,
) -> Vec<Observation> {
    let mut obs = Vec::new();
    for (vi, v) in views.iter().enumerate() {
        let (p, d) = v.camera.project(x);
        if d <= 0.0 || !v.camera.contains(&p) {
            continue;
        }
        let visible = renderer
            .hit(&v.camera, p.x, p.y)
            .is_some_and(|(hs, _, _, _)| hs == si);
        let px = (p.x.round() as usize).min(v.width() - 1);
        let py = (p.y.round() as usize).min(v.height() - 1);
        if visible && *v.segmentation.at(px, py) == label {
            obs.push(Observation {
                view: vi,
                pixel: Point2::new(p.x, p.y),
            });
        }
    }
    obs
}

fn sample_sparse(spec: &SynthSpec, renderer: &Renderer, views: &[ViewBundle]) -> Result<SparsePointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_5A12_5E00_0000);
    let untextured: Vec<usize> = (0..spec.surfaces.len())
        .filter(|&i| !spec.surfaces[i].texture.is_textured())
        .collect();
    let textured: Vec<usize> = (0..spec.surfaces.len())
        .filter(|&i| spec.surfaces[i].texture.is_textured())
        .collect();
    let anchors = (untextured.len() * spec.untextured_anchors).min(spec.sparse_count);
    let total_area: f64 = textured.iter().map(|&i| spec.surfaces[i].area()).sum();
    if spec.sparse_count > anchors && textured.is_empty() {
        return Err(Error::Parameter(
            "sparse points requested but no textured surface exists".into(),
        ));
    }
    let mut points = Vec::with_capacity(spec.sparse_count);
    let mut attempts = 0usize;
    while points.len() < spec.sparse_count {
        attempts += 1;
        if attempts > 200_000 + 1000 * spec.sparse_count {
            return Err(Error::Parameter(format!(
                "could only place {} of {} sparse points visible in 2+ views",
                points.len(),
                spec.sparse_count
            )));
        }
        let k = points.len();
        let (si, x, y) = if k < anchors {
            let si = untextured[k / spec.untextured_anchors.max(1)];
            let s = &spec.surfaces[si];
            let (wx, wy) = (s.x_range.1 - s.x_range.0, s.y_range.1 - s.y_range.0);
            let corner = k % 4;
            let fx = rng.gen_range(0.04..0.2);
            let fy = rng.gen_range(0.04..0.2);
            let x = if corner % 2 == 0 { s.x_range.0 + fx * wx } else { s.x_range.1 - fx * wx };
            let y = if corner < 2 { s.y_range.0 + fy * wy } else { s.y_range.1 - fy * wy };
            (si, x, y)
        } else {
            let mut pick = rng.gen_range(0.0..total_area);
            let mut si = textured[textured.len() - 1];
            for &i in &textured {
                if pick < spec.surfaces[i].area() {
                    si = i;
                    break;
                }
                pick -= spec.surfaces[i].area();
            }
            let s = &spec.surfaces[si];
            (si, rng.gen_range(s.x_range.0..s.x_range.1), rng.gen_range(s.y_range.0..s.y_range.1))
        };
        let pos = Point3::new(x, y, spec.surfaces[si].depth);
        let obs = observe(renderer, views, si, spec.surfaces[si].label, &pos);
        if obs.len() >= 2 {
            points.push(SparsePoint {
                position: pos,
                observations: obs,
            });
        }
    }
    Ok(SparsePointSet { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fronto_two_plane() -> SynthSpec {
        SynthSpec {
            width: 96,
            height: 72,
            views: 3,
            focal: 80.0,
            ring_radius: 0.2,
            surfaces: vec![
                Surface {
                    label: 1,
                    depth: 4.0,
                    x_range: (-10.0, 10.0),
                    y_range: (-10.0, 10.0),
                    texture: Texture::Noise { density: 8.0, contrast: 80.0 },
                },
                Surface {
                    label: 2,
                    depth: 2.0,
                    x_range: (-0.5, 0.5),
                    y_range: (-0.4, 0.4),
                    texture: Texture::Noise { density: 12.0, contrast: 80.0 },
                },
            ],
            sparse_count: 100,
            untextured_anchors: 0,
            mono: MonoDistortion::Affine { a: 0.5, b: 1.0 },
            depth_range: None,
            supersample: 1,
            seed: 3,
        }
    }

    #[test]
    fn gt_has_exactly_two_depths() {
        let s = generate_synthetic_scene(&fronto_two_plane()).unwrap();
        assert_eq!(s.scene.views.len(), 3);
        for gt in &s.gt_depth {
            let mut values: Vec<f32> = gt.data().to_vec();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            assert_eq!(values, vec![2.0, 4.0]);
        }
    }

    #[test]
    fn affine_mono_matches_construction() {
        let s = generate_synthetic_scene(&fronto_two_plane()).unwrap();
        for (v, gt) in s.scene.views.iter().zip(&s.gt_depth) {
            for (m, d) in v.mono_depth.data().iter().zip(gt.data()) {
                assert_eq!(*m, 0.5 * *d as f64 + 1.0);
            }
        }
    }

    #[test]
    fn sparse_points_reproject_onto_their_surfaces() {
        let s = generate_synthetic_scene(&fronto_two_plane()).unwrap();
        assert_eq!(s.scene.sparse.len(), 100);
        for p in &s.scene.sparse.points {
            assert!(p.observations.len() >= 2);
            for o in &p.observations {
                let cam = &s.scene.views[o.view].camera;
                let (q, _) = cam.project(&p.position);
                assert!((q - o.pixel).norm() <= 0.5);
                // the renderer agrees the point sits on a surface at its depth
                let hit = Renderer { spec: &fronto_two_plane() }.hit(cam, q.x, q.y).unwrap();
                assert!((hit.1 - p.position.z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gt_satisfies_plane_equations() {
        let spec = fronto_two_plane();
        let s = generate_synthetic_scene(&spec).unwrap();
        for (v, gt) in s.scene.views.iter().zip(&s.gt_depth) {
            for y in (0..v.height()).step_by(7) {
                for x in (0..v.width()).step_by(5) {
                    let d = *gt.at(x, y) as f64;
                    let label = *v.segmentation.at(x, y);
                    let surf = spec.surfaces.iter().find(|s| s.label == label).unwrap();
                    let world = v.camera.backproject(x as f64, y as f64, d);
                    assert!(((world.z - surf.depth) / surf.depth).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn coplanar_overlap_is_rejected() {
        let mut spec = fronto_two_plane();
        spec.surfaces[1].depth = 4.0;
        assert!(matches!(generate_synthetic_scene(&spec), Err(Error::Parameter(_))));
    }

    #[test]
    fn per_instance_mono() {
        let mut spec = fronto_two_plane();
        spec.mono = MonoDistortion::PerInstance(vec![(1.0, 0.0), (2.0, 3.0)]);
        let s = generate_synthetic_scene(&spec).unwrap();
        let v = &s.scene.views[0];
        let (cx, cy) = (v.width() / 2, v.height() / 2);
        assert_eq!(*v.mono_depth.at(cx, cy), 2.0 * 2.0 + 3.0);
        assert_eq!(*v.mono_depth.at(0, 0), 4.0);
    }
}
