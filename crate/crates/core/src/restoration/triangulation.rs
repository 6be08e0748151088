//! Per-instance Delaunay triangulation of sparse observations and the
//! inverse-distance interpolation inside a triangle.

use std::collections::BTreeMap;

use nalgebra::Point2;
use spade::{DelaunayTriangulation, HasPosition, Triangulation};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scene::{SparsePointSet, ViewBundle, ViewObservation, UNLABELED};

/// Distances (pixels) or mono differences below this count as coincidence.
pub const SINGULAR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub pixel: Point2<f64>,
    pub depth: f64,
    /// Index of the sparse point.
    pub point: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlaneClass {
    /// Mono depth over the triangle is planar; `plane = (a, b, c)` with
    /// normalised mono `D ≈ a·u + b·v + c`.
    Planar { plane: [f64; 3], inlier_ratio: f64 },
    NonPlanar { inlier_ratio: f64 },
}

impl PlaneClass {
    pub fn is_planar(&self) -> bool {
        matches!(self, PlaneClass::Planar { .. })
    }

    pub fn inlier_ratio(&self) -> f64 {
        match *self {
            PlaneClass::Planar { inlier_ratio, .. } | PlaneClass::NonPlanar { inlier_ratio } => inlier_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCluster {
    pub label: u16,
    pub members: Vec<Member>,
    /// Vertex triples into `members`.
    pub triangles: Vec<[usize; 3]>,
    /// One entry per triangle once classified.
    pub classes: Vec<PlaneClass>,
}

impl InstanceCluster {
    pub fn vertices(&self, t: usize) -> [Member; 3] {
        self.triangles[t].map(|i| self.members[i])
    }
}

struct Site {
    pos: spade::Point2<f64>,
    member: usize,
}

impl HasPosition for Site {
    type Scalar = f64;
    fn position(&self) -> spade::Point2<f64> {
        self.pos
    }
}

/// Label at the pixel nearest an observation.
pub fn label_at(labels: &Raster<u16>, p: &Point2<f64>) -> u16 {
    let x = (p.x.round().max(0.0) as usize).min(labels.width() - 1);
    let y = (p.y.round().max(0.0) as usize).min(labels.height() - 1);
    *labels.at(x, y)
}

/// Twice the signed area of `(a, b, c)`.
pub fn cross(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Groups this view's observations by instance label and triangulates each group.
///
/// Unlabeled observations form no group. Coincident observations keep the first.
pub fn cluster_and_triangulate(view_index: usize, view: &ViewBundle, sparse: &SparsePointSet) -> Vec<InstanceCluster> {
    let obs = sparse.in_view(view_index, &view.camera);
    cluster_observations(&view.segmentation, &obs)
}

pub fn cluster_observations(labels: &Raster<u16>, obs: &[ViewObservation]) -> Vec<InstanceCluster> {
    let mut groups: BTreeMap<u16, Vec<Member>> = BTreeMap::new();
    for o in obs {
        if !(o.depth > 0.0) {
            continue;
        }
        let l = label_at(labels, &o.pixel);
        if l == UNLABELED {
            continue;
        }
        let g = groups.entry(l).or_default();
        if g.iter().any(|m| m.pixel == o.pixel) {
            continue;
        }
        g.push(Member {
            pixel: o.pixel,
            depth: o.depth,
            point: o.point,
        });
    }
    groups
        .into_iter()
        .map(|(label, members)| {
            let triangles = triangulate(&members);
            InstanceCluster {
                label,
                members,
                triangles,
                classes: Vec::new(),
            }
        })
        .collect()
}

/// Delaunay triangles over member pixels with vertices in counter-clockwise
/// image order (positive `cross`), sorted for determinism.
pub fn triangulate(members: &[Member]) -> Vec<[usize; 3]> {
    if members.len() < 3 {
        return Vec::new();
    }
    let mut dt: DelaunayTriangulation<Site> = DelaunayTriangulation::new();
    for (i, m) in members.iter().enumerate() {
        // positions are finite and deduplicated, so insertion cannot fail
        let _ = dt.insert(Site {
            pos: spade::Point2::new(m.pixel.x, m.pixel.y),
            member: i,
        });
    }
    let mut tris: Vec<[usize; 3]> = dt
        .inner_faces()
        .filter_map(|f| {
            let [a, b, c] = f.vertices().map(|v| v.data().member);
            let area = cross(&members[a].pixel, &members[b].pixel, &members[c].pixel);
            if area.abs() <= 1e-12 {
                return None;
            }
            let mut t = if area > 0.0 { [a, b, c] } else { [a, c, b] };
            // rotate so the smallest index leads, keeping orientation
            let k = (0..3).min_by_key(|&k| t[k]).unwrap();
            t.rotate_left(k);
            Some(t)
        })
        .collect();
    tris.sort_unstable();
    tris
}

/// Barycentric-style containment: true when `p` lies inside or on the triangle.
pub fn contains(tri: &[Point2<f64>; 3], p: &Point2<f64>) -> bool {
    let [a, b, c] = tri;
    let area = cross(a, b, c);
    if area.abs() <= 1e-12 {
        return false;
    }
    let tol = 1e-9 * area.abs();
    let s = area.signum();
    s * cross(a, b, p) >= -tol && s * cross(b, c, p) >= -tol && s * cross(c, a, p) >= -tol
}

/// Normalised weighted mean with the coincidence rule: a weight key below
/// [`SINGULAR_EPS`] returns that vertex's value outright.
pub fn inverse_weighted(keys: [f64; 3], values: [f64; 3]) -> f64 {
    if let Some(k) = (0..3).find(|&k| keys[k] < SINGULAR_EPS) {
        return values[k];
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..3 {
        num += values[k] / keys[k];
        den += 1.0 / keys[k];
    }
    num / den
}

/// Inverse-distance-weighted vertex depth at `p`, which must be on the triangle.
pub fn interpolate_triangle_depth(p: &Point2<f64>, vertices: &[Point2<f64>; 3], depths: [f64; 3]) -> Result<f64> {
    if !contains(vertices, p) {
        return Err(Error::Contract(format!(
            "pixel ({:.3}, {:.3}) is outside the triangle",
            p.x, p.y
        )));
    }
    Ok(inverse_weighted(vertices.map(|v| (v - p).norm()), depths))
}

/// Pixel centres covered by a triangle, in scan order.
pub fn covered_pixels(tri: &[Point2<f64>; 3], width: usize, height: usize) -> Vec<(usize, usize)> {
    let min_x = tri.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_x = tri.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(width as f64 - 1.0) as i64;
    let min_y = tri.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_y = tri.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(height as f64 - 1.0) as i64;
    let mut out = Vec::new();
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            if contains(tri, &Point2::new(x as f64, y as f64)) {
                out.push((x as usize, y as usize));
            }
        }
    }
    out
}
