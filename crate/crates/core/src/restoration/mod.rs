//! Dense depth restoration from sparse points and monocular depth.
//!
//! Sparse observations are clustered by instance label and triangulated per
//! instance. Triangles whose monocular depth is planar keep inverse-distance
//! interpolated depth; other triangles weight their vertices by monocular depth
//! similarity. Pixels outside every triangle borrow from the nearest triangle of
//! their instance, either by intersecting its 3-D plane or by scaling with the
//! monocular depth ratio.

pub mod triangulation;

pub use triangulation::{
    cluster_and_triangulate, cluster_observations, interpolate_triangle_depth, InstanceCluster, Member, PlaneClass,
    SINGULAR_EPS,
};

use std::collections::BTreeMap;

use kiddo::{KdTree, SquaredEuclidean};
use nalgebra::{Point2, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::raster::Raster;
use crate::scene::{SparsePointSet, ViewBundle, UNLABELED};
use triangulation::{contains, covered_pixels, cross, inverse_weighted};

/// Marker depth stored at Invalid pixels.
pub const INVALID: f64 = -1.0;

/// Stop RANSAC once the chance of missing a better model drops below this.
const RANSAC_CONFIDENCE: f64 = 0.999;
/// Upper bound on the pixels scored per RANSAC hypothesis.
const RANSAC_SCORE_PIXELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    TriangleInterp,
    PlaneProject,
    GeomRefined,
    ProportionalMap,
    Invalid,
}

impl Provenance {
    pub fn color(self) -> [u8; 3] {
        match self {
            Provenance::TriangleInterp => [40, 180, 60],
            Provenance::PlaneProject => [50, 90, 230],
            Provenance::GeomRefined => [240, 150, 30],
            Provenance::ProportionalMap => [200, 50, 200],
            Provenance::Invalid => [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoredDepthMap {
    pub depth: Raster<f64>,
    pub provenance: Raster<Provenance>,
}

impl RestoredDepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            depth: Raster::filled(width, height, INVALID),
            provenance: Raster::filled(width, height, Provenance::Invalid),
        }
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        *self.provenance.at(x, y) != Provenance::Invalid
    }

    pub fn valid_count(&self) -> usize {
        self.provenance.data().iter().filter(|&&p| p != Provenance::Invalid).count()
    }

    pub fn provenance_image(&self) -> Raster<[u8; 3]> {
        self.provenance.map(|p| p.color())
    }

    /// Depth as `f32` with Invalid pixels set to the on-disk invalid marker.
    pub fn to_f32(&self) -> Raster<f32> {
        Raster::from_fn(self.depth.width(), self.depth.height(), |x, y| {
            if self.is_valid(x, y) {
                *self.depth.at(x, y) as f32
            } else {
                crate::io::INVALID_DEPTH
            }
        })
    }

    /// 2x nearest downsample.
    pub fn downsampled(&self) -> Self {
        Self {
            depth: self.depth.downsample_nearest(),
            provenance: self.provenance.downsample_nearest(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestoreParams {
    /// RANSAC residual threshold on `[0, 1]`-normalised mono depth; also the
    /// plane-distance threshold for pixels outside triangles.
    pub gamma: f64,
    /// Planar iff the inlier ratio exceeds this.
    pub kappa: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
}

impl Default for RestoreParams {
    fn default() -> Self {
        Self {
            gamma: 5e-3,
            kappa: 0.7,
            ransac_iterations: 1000,
            seed: 0,
        }
    }
}

/// Least-squares-free plane through three `(u, v, z)` samples.
fn plane_through(p: [(f64, f64, f64); 3]) -> Option<[f64; 3]> {
    let [(u0, v0, z0), (u1, v1, z1), (u2, v2, z2)] = p;
    let det = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0);
    if det.abs() < 1e-9 {
        return None;
    }
    let a = ((z1 - z0) * (v2 - v0) - (z2 - z0) * (v1 - v0)) / det;
    let b = ((u1 - u0) * (z2 - z0) - (u2 - u0) * (z1 - z0)) / det;
    Some([a, b, z0 - a * u0 - b * v0])
}

#[inline]
fn plane_eval(pl: &[f64; 3], u: f64, v: f64) -> f64 {
    pl[0] * u + pl[1] * v + pl[2]
}

/// RANSAC plane fit of normalised mono depth over the given pixels.
///
/// Hypotheses come from random pixel triples; at most [`RANSAC_SCORE_PIXELS`]
/// evenly strided pixels score each one, the iteration count adapts to the best
/// inlier ratio so far (capped at `max_iterations`), and the final ratio is
/// measured on every pixel.
pub fn classify_pixels(
    pixels: &[(usize, usize)],
    mono_norm: &Raster<f64>,
    gamma: f64,
    kappa: f64,
    max_iterations: usize,
    rng: &mut impl Rng,
) -> PlaneClass {
    let n = pixels.len();
    if n < 3 {
        return PlaneClass::NonPlanar { inlier_ratio: 0.0 };
    }
    let sample = |i: usize| {
        let (x, y) = pixels[i];
        (x as f64, y as f64, *mono_norm.at(x, y))
    };
    let stride = n.div_ceil(RANSAC_SCORE_PIXELS);
    let scored: Vec<(f64, f64, f64)> = (0..n).step_by(stride).map(sample).collect();
    let count = |pl: &[f64; 3], pts: &[(f64, f64, f64)]| {
        pts.iter().filter(|&&(u, v, z)| (z - plane_eval(pl, u, v)).abs() <= gamma).count()
    };
    let mut best: Option<([f64; 3], usize)> = None;
    let mut limit = max_iterations;
    let mut it = 0;
    while it < limit {
        it += 1;
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.gen_range(0..n - 2);
        for m in [i.min(j), i.max(j)] {
            if k >= m {
                k += 1;
            }
        }
        let Some(pl) = plane_through([sample(i), sample(j), sample(k)]) else {
            continue;
        };
        let c = count(&pl, &scored);
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((pl, c));
            let ratio = c as f64 / scored.len() as f64;
            if ratio >= 1.0 {
                break;
            }
            let miss = 1.0 - ratio.powi(3);
            if miss > 0.0 && miss < 1.0 {
                let needed = ((1.0 - RANSAC_CONFIDENCE).ln() / miss.ln()).ceil();
                limit = limit.min(needed.max(1.0) as usize);
            }
        }
    }
    let Some((plane, _)) = best else {
        return PlaneClass::NonPlanar { inlier_ratio: 0.0 };
    };
    let all: Vec<(f64, f64, f64)> = (0..n).map(sample).collect();
    let inlier_ratio = count(&plane, &all) as f64 / n as f64;
    if inlier_ratio > kappa {
        PlaneClass::Planar { plane, inlier_ratio }
    } else {
        PlaneClass::NonPlanar { inlier_ratio }
    }
}

/// Classifies a triangle by the pixels it covers (labels ignored).
pub fn classify_triangle(
    triangle: &[Point2<f64>; 3],
    mono_norm: &Raster<f64>,
    gamma: f64,
    kappa: f64,
    max_iterations: usize,
    rng: &mut impl Rng,
) -> PlaneClass {
    let px = covered_pixels(triangle, mono_norm.width(), mono_norm.height());
    classify_pixels(&px, mono_norm, gamma, kappa, max_iterations, rng)
}

#[inline]
fn round_pixel(p: &Point2<f64>, w: usize, h: usize) -> (usize, usize) {
    (
        (p.x.round().max(0.0) as usize).min(w - 1),
        (p.y.round().max(0.0) as usize).min(h - 1),
    )
}

/// Closest point of a triangle to `p`.
fn closest_on_triangle(tri: &[Point2<f64>; 3], p: &Point2<f64>) -> Point2<f64> {
    if contains(tri, p) {
        return *p;
    }
    let mut best = tri[0];
    let mut best_d = f64::INFINITY;
    for k in 0..3 {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        let q = a + ab * t;
        let d = (p - q).norm_squared();
        if d < best_d {
            best_d = d;
            best = q;
        }
    }
    best
}

/// Per-triangle data shared by every routing branch.
struct TriangleGeom {
    pixels: [Point2<f64>; 3],
    depths: [f64; 3],
    /// Normalised mono depth at the vertices.
    mono: [f64; 3],
    /// Camera-frame 3-D plane `n · X = n · x0`.
    normal: Vector3<f64>,
    offset: f64,
    class: PlaneClass,
}

impl TriangleGeom {
    fn new(c: &InstanceCluster, t: usize, mono_norm: &Raster<f64>, cam: &CameraModel) -> Self {
        let v = c.vertices(t);
        let (w, h) = mono_norm.dims();
        let pts = v.map(|m| cam.backproject_camera(m.pixel.x, m.pixel.y, m.depth));
        let normal = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
        Self {
            pixels: v.map(|m| m.pixel),
            depths: v.map(|m| m.depth),
            mono: v.map(|m| {
                let (x, y) = round_pixel(&m.pixel, w, h);
                *mono_norm.at(x, y)
            }),
            offset: normal.dot(&pts[0]),
            normal,
            class: c.classes[t],
        }
    }

    /// Depth at an on-triangle point: inverse distance on planar triangles,
    /// inverse mono difference otherwise.
    fn inside_depth(&self, p: &Point2<f64>, mono_p: f64) -> (f64, Provenance) {
        if self.class.is_planar() {
            (
                inverse_weighted(self.pixels.map(|v| (v - p).norm()), self.depths),
                Provenance::TriangleInterp,
            )
        } else {
            (
                inverse_weighted(self.mono.map(|m| (m - mono_p).abs()), self.depths),
                Provenance::GeomRefined,
            )
        }
    }

    /// Depth where the pixel ray meets the triangle's 3-D plane.
    fn plane_depth(&self, cam: &CameraModel, u: f64, v: f64) -> Option<f64> {
        let r = cam.ray(u, v);
        let den = self.normal.dot(&r);
        if den.abs() < 1e-12 {
            return None;
        }
        let z = self.offset / den * r.z;
        (z.is_finite() && z > 0.0).then_some(z)
    }
}

/// Routes every labelled pixel of every cluster to a depth.
///
/// `clusters` must be classified (one class per triangle).
pub fn refine_depth(
    clusters: &[InstanceCluster],
    mono: &Raster<f64>,
    labels: &Raster<u16>,
    cam: &CameraModel,
    gamma: f64,
) -> RestoredDepthMap {
    let (w, h) = mono.dims();
    let mono_norm = mono.normalized(1.0);
    let mut by_label: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.data().iter().enumerate() {
        if l != UNLABELED {
            by_label.entry(l).or_default().push(i);
        }
    }
    let results: Vec<Vec<(usize, f64, Provenance)>> = clusters
        .par_iter()
        .map(|c| {
            let Some(pixels) = by_label.get(&c.label) else {
                return Vec::new();
            };
            refine_instance(c, pixels, mono, &mono_norm, labels, cam, gamma)
        })
        .collect();
    let mut out = RestoredDepthMap::invalid(w, h);
    for (i, d, p) in results.into_iter().flatten() {
        out.depth.data_mut()[i] = d;
        out.provenance.data_mut()[i] = p;
    }
    out
}

fn refine_instance(
    c: &InstanceCluster,
    pixels: &[usize],
    mono: &Raster<f64>,
    mono_norm: &Raster<f64>,
    labels: &Raster<u16>,
    cam: &CameraModel,
    gamma: f64,
) -> Vec<(usize, f64, Provenance)> {
    let (w, h) = mono.dims();
    let mut out = Vec::with_capacity(pixels.len());
    if c.triangles.is_empty() {
        if c.members.is_empty() {
            return out;
        }
        for &i in pixels {
            let p = Point2::new((i % w) as f64, (i / w) as f64);
            let nearest = c
                .members
                .iter()
                .min_by(|a, b| (a.pixel - p).norm_squared().total_cmp(&(b.pixel - p).norm_squared()))
                .unwrap();
            out.push((i, nearest.depth, Provenance::PlaneProject));
        }
        return out;
    }
    let geoms: Vec<TriangleGeom> = (0..c.triangles.len()).map(|t| TriangleGeom::new(c, t, mono_norm, cam)).collect();
    // inside triangles: first triangle (sorted order) owns shared edge pixels
    let mut done = std::collections::HashSet::new();
    for g in &geoms {
        for (x, y) in covered_pixels(&g.pixels, w, h) {
            let i = y * w + x;
            if *labels.at(x, y) != c.label || !done.insert(i) {
                continue;
            }
            let (d, tag) = g.inside_depth(&Point2::new(x as f64, y as f64), *mono_norm.at(x, y));
            out.push((i, d, tag));
        }
    }
    // outside: nearest planar triangle by centroid, else nearest triangle
    let mut pool: Vec<usize> = (0..geoms.len()).filter(|&t| geoms[t].class.is_planar()).collect();
    if pool.is_empty() {
        pool = (0..geoms.len()).collect();
    }
    let mut tree: KdTree<f64, 2> = KdTree::new();
    for (slot, &t) in pool.iter().enumerate() {
        let g = &geoms[t];
        let cx = (g.pixels[0].x + g.pixels[1].x + g.pixels[2].x) / 3.0;
        let cy = (g.pixels[0].y + g.pixels[1].y + g.pixels[2].y) / 3.0;
        tree.add(&[cx, cy], slot as u64);
    }
    for &i in pixels {
        if done.contains(&i) {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let p = Point2::new(x as f64, y as f64);
        let t = pool[tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y]).item as usize];
        let g = &geoms[t];
        if let PlaneClass::Planar { plane, .. } = g.class {
            if (*mono_norm.at(x, y) - plane_eval(&plane, p.x, p.y)).abs() < gamma {
                if let Some(d) = g.plane_depth(cam, p.x, p.y) {
                    out.push((i, d, Provenance::PlaneProject));
                    continue;
                }
            }
        }
        let q = closest_on_triangle(&g.pixels, &p);
        let (qx, qy) = round_pixel(&q, w, h);
        let (d_q, _) = g.inside_depth(&q, *mono_norm.at(qx, qy));
        let (m_p, m_q) = (*mono.at(x, y), *mono.at(qx, qy));
        let d = if m_q.abs() < SINGULAR_EPS {
            d_q
        } else {
            let r = d_q * m_p / m_q;
            if r.is_finite() && r > 0.0 {
                r
            } else {
                d_q
            }
        };
        out.push((i, d, Provenance::ProportionalMap));
    }
    out
}

/// Classifies every triangle of every cluster in place.
pub fn classify_clusters(
    clusters: &mut [InstanceCluster],
    mono: &Raster<f64>,
    labels: &Raster<u16>,
    params: &RestoreParams,
    view_index: usize,
) {
    let mono_norm = mono.normalized(1.0);
    let (w, h) = mono.dims();
    clusters.par_iter_mut().for_each(|c| {
        c.classes = (0..c.triangles.len())
            .map(|t| {
                let tri = c.vertices(t).map(|m| m.pixel);
                let px: Vec<(usize, usize)> = covered_pixels(&tri, w, h)
                    .into_iter()
                    .filter(|&(x, y)| *labels.at(x, y) == c.label)
                    .collect();
                let mut rng = crate::rng::stream(params.seed, &[0x7e57, view_index as u64, c.label as u64, t as u64]);
                classify_pixels(&px, &mono_norm, params.gamma, params.kappa, params.ransac_iterations, &mut rng)
            })
            .collect();
    });
}

/// Full restoration of one view.
pub fn restore(view_index: usize, view: &ViewBundle, sparse: &SparsePointSet, params: &RestoreParams) -> RestoredDepthMap {
    let mut clusters = cluster_and_triangulate(view_index, view, sparse);
    classify_clusters(&mut clusters, &view.mono_depth, &view.segmentation, params, view_index);
    refine_depth(&clusters, &view.mono_depth, &view.segmentation, &view.camera, params.gamma)
}

/// Sanity check used by tests: the vertex order of a stored triangle.
pub fn is_counter_clockwise(tri: &[Point2<f64>; 3]) -> bool {
    cross(&tri[0], &tri[1], &tri[2]) > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::intrinsics;
    use crate::scene::ViewObservation;
    use nalgebra::Matrix3;

    fn rng() -> rand_chacha::ChaCha8Rng {
        crate::rng::stream(1, &[])
    }

    #[test]
    fn affine_mono_is_planar() {
        let mono = Raster::from_fn(40, 40, |x, y| 0.3 * x as f64 - 0.1 * y as f64 + 4.0).normalized(1.0);
        let tri = [Point2::new(2.0, 2.0), Point2::new(30.0, 5.0), Point2::new(10.0, 35.0)];
        let c = classify_triangle(&tri, &mono, 5e-3, 0.7, 1000, &mut rng());
        assert!(c.is_planar());
        assert_eq!(c.inlier_ratio(), 1.0);
    }

    #[test]
    fn sphere_cap_is_non_planar() {
        let mono = Raster::from_fn(60, 60, |x, y| {
            let dx = x as f64 - 30.0;
            let dy = y as f64 - 30.0;
            (40.0f64.powi(2) - dx * dx - dy * dy).sqrt()
        })
        .normalized(1.0);
        let tri = [Point2::new(5.0, 5.0), Point2::new(55.0, 8.0), Point2::new(28.0, 55.0)];
        let c = classify_triangle(&tri, &mono, 5e-3, 0.7, 1000, &mut rng());
        assert!(!c.is_planar());
        // least-squares oracle: even the best-fit plane leaves most residuals above gamma
        let px = covered_pixels(&tri, 60, 60);
        let (mut ata, mut atb) = (nalgebra::Matrix3::<f64>::zeros(), nalgebra::Vector3::<f64>::zeros());
        for &(x, y) in &px {
            let a = nalgebra::Vector3::new(x as f64, y as f64, 1.0);
            ata += a * a.transpose();
            atb += a * *mono.at(x, y);
        }
        let sol = ata.try_inverse().unwrap() * atb;
        let inl = px
            .iter()
            .filter(|&&(x, y)| (sol.x * x as f64 + sol.y * y as f64 + sol.z - mono.at(x, y)).abs() <= 5e-3)
            .count();
        assert!((inl as f64 / px.len() as f64) <= 0.7);
    }

    #[test]
    fn tiny_triangle_is_degenerate() {
        let mono = Raster::filled(10, 10, 1.0);
        let tri = [Point2::new(1.0, 1.0), Point2::new(2.0, 1.0), Point2::new(1.2, 1.4)];
        let c = classify_triangle(&tri, &mono, 5e-3, 0.7, 1000, &mut rng());
        assert_eq!(c, PlaneClass::NonPlanar { inlier_ratio: 0.0 });
    }

    fn camera(w: usize, h: usize) -> CameraModel {
        CameraModel::new(
            intrinsics(100.0, 100.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
            Matrix3::identity(),
            Vector3::zeros(),
            w,
            h,
        )
        .unwrap()
    }

    fn obs(points: &[(f64, f64, f64)]) -> Vec<ViewObservation> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(u, v, d))| ViewObservation {
                point: i,
                pixel: Point2::new(u, v),
                depth: d,
            })
            .collect()
    }

    fn run(labels: &Raster<u16>, mono: &Raster<f64>, o: &[ViewObservation], cam: &CameraModel) -> RestoredDepthMap {
        let mut cl = cluster_observations(labels, o);
        classify_clusters(&mut cl, mono, labels, &RestoreParams::default(), 0);
        refine_depth(&cl, mono, labels, cam, 5e-3)
    }

    #[test]
    fn tilted_plane_outside_triangle_projects_onto_the_plane() {
        // world plane z = 2 + 0.01 x_pixel-ish: build from a 3-D plane n.X = c
        let (w, h) = (40, 30);
        let cam = camera(w, h);
        let n = Vector3::new(0.1, -0.05, 1.0);
        let c0 = 3.0;
        let depth_at = |u: f64, v: f64| {
            let r = cam.ray(u, v);
            c0 / n.dot(&r)
        };
        let labels = Raster::filled(w, h, 1u16);
        // mono = affine in pixels makes every triangle planar and every outside pixel pass the plane test
        let mono = Raster::from_fn(w, h, |x, y| 1.0 + 0.01 * x as f64 + 0.02 * y as f64);
        let o = obs(&[(10.0, 8.0, depth_at(10.0, 8.0)), (25.0, 9.0, depth_at(25.0, 9.0)), (15.0, 20.0, depth_at(15.0, 20.0))]);
        let r = run(&labels, &mono, &o, &cam);
        let px = (35usize, 25usize);
        assert_eq!(*r.provenance.at(px.0, px.1), Provenance::PlaneProject);
        let d = *r.depth.at(px.0, px.1);
        assert!((d - depth_at(35.0, 25.0)).abs() < 1e-9 * d);
    }

    #[test]
    fn non_planar_vertex_match_takes_vertex_depth() {
        let (w, h) = (30, 30);
        let cam = camera(w, h);
        let labels = Raster::filled(w, h, 1u16);
        // strongly curved mono: no triangle is planar
        let mono = Raster::from_fn(w, h, |x, y| ((x as f64 * 0.7).sin() + (y as f64 * 0.9).cos()) * 10.0 + 30.0);
        let o = obs(&[(2.0, 2.0, 2.0), (27.0, 3.0, 3.0), (5.0, 27.0, 4.0)]);
        let mut cl = cluster_observations(&labels, &o);
        classify_clusters(&mut cl, &mono, &labels, &RestoreParams::default(), 0);
        assert!(!cl[0].classes[0].is_planar());
        let r = refine_depth(&cl, &mono, &labels, &cam, 5e-3);
        // a pixel inside whose mono equals vertex A's mono
        let mono_norm = mono.normalized(1.0);
        let ma = *mono_norm.at(2, 2);
        let tri = cl[0].vertices(0).map(|m| m.pixel);
        let hit = covered_pixels(&tri, w, h)
            .into_iter()
            .find(|&(x, y)| (x, y) != (2, 2) && (*mono_norm.at(x, y) - ma).abs() < 1e-12);
        if let Some((x, y)) = hit {
            assert_eq!(*r.depth.at(x, y), 2.0);
        }
        assert_eq!(*r.depth.at(2, 2), 2.0);
        assert_eq!(*r.provenance.at(2, 2), Provenance::GeomRefined);
        // convex combination everywhere inside
        for (x, y) in covered_pixels(&tri, w, h) {
            let d = *r.depth.at(x, y);
            assert!((2.0..=4.0).contains(&d));
        }
    }

    #[test]
    fn no_points_means_all_invalid() {
        let labels = Raster::filled(20, 20, 1u16);
        let mono = Raster::filled(20, 20, 1.0);
        let r = run(&labels, &mono, &[], &camera(20, 20));
        assert_eq!(r.valid_count(), 0);
    }

    #[test]
    fn few_points_fall_back_to_nearest() {
        let labels = Raster::from_fn(20, 20, |x, _| if x < 10 { 1 } else { 2 });
        let mono = Raster::filled(20, 20, 1.0);
        let r = run(&labels, &mono, &obs(&[(3.0, 3.0, 2.0), (6.0, 15.0, 2.5)]), &camera(20, 20));
        assert_eq!(*r.depth.at(2, 2), 2.0);
        assert_eq!(*r.depth.at(5, 18), 2.5);
        assert_eq!(*r.provenance.at(5, 18), Provenance::PlaneProject);
        // label 2 has no observations
        assert!(!r.is_valid(15, 5));
    }

    #[test]
    fn unlabeled_pixels_stay_invalid() {
        let labels = Raster::from_fn(20, 20, |x, _| if x < 15 { 1 } else { 0 });
        let mono = Raster::filled(20, 20, 1.0);
        let r = run(&labels, &mono, &obs(&[(3.0, 3.0, 2.0), (12.0, 4.0, 2.0), (5.0, 15.0, 2.0)]), &camera(20, 20));
        assert!(r.is_valid(0, 19));
        assert!(!r.is_valid(17, 10));
    }

    #[test]
    fn restoring_twice_is_identical() {
        let (w, h) = (50, 40);
        let labels = Raster::from_fn(w, h, |x, y| if x + y < 45 { 1 } else { 2 });
        let mono = Raster::from_fn(w, h, |x, y| ((x * y) as f64).sqrt());
        let o = obs(&[
            (3.0, 3.0, 2.0),
            (30.0, 4.0, 2.2),
            (5.0, 30.0, 2.1),
            (15.0, 12.0, 2.05),
            (45.0, 30.0, 4.0),
            (35.0, 38.0, 4.2),
            (48.0, 10.0, 3.9),
            (40.0, 25.0, 4.1),
        ]);
        let a = run(&labels, &mono, &o, &camera(w, h));
        let b = run(&labels, &mono, &o, &camera(w, h));
        assert_eq!(a, b);
        let mut more = o.clone();
        more.push(ViewObservation { point: 99, pixel: Point2::new(20.0, 5.0), depth: 2.1 });
        let c = run(&labels, &mono, &more, &camera(w, h));
        assert!(c.valid_count() >= a.valid_count());
    }
}
