//! Depth-continuity labelling of boundary pixels from monocular depth gradients.

use std::collections::{BTreeSet, VecDeque};

use super::boundary::BoundaryMap;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Monocular depth is min-max normalised onto `[0, MONO_SCALE]` before Sobel.
pub const MONO_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeClass {
    Continuous,
    Discontinuous,
}

impl EdgeClass {
    pub fn opposite(self) -> Self {
        match self {
            EdgeClass::Continuous => EdgeClass::Discontinuous,
            EdgeClass::Discontinuous => EdgeClass::Continuous,
        }
    }
}

pub const NO_CLUSTER: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMap {
    class: Raster<Option<EdgeClass>>,
    cluster: Raster<u32>,
    clusters: usize,
}

impl OcclusionMap {
    pub fn class(&self) -> &Raster<Option<EdgeClass>> {
        &self.class
    }

    pub fn cluster(&self) -> &Raster<u32> {
        &self.cluster
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters
    }

    /// Builds a map from explicit labels; clusters are recomputed.
    pub fn from_classes(class: Raster<Option<EdgeClass>>) -> Self {
        let comps = Components::label(&class);
        let cluster = comps.id.clone();
        Self {
            class,
            cluster,
            clusters: comps.size.len(),
        }
    }

    /// Every boundary pixel labelled `c`.
    pub fn uniform(boundary: &BoundaryMap, c: EdgeClass) -> Self {
        Self::from_classes(boundary.mask().map(|&b| b.then_some(c)))
    }

    /// Discontinuous edges red, continuous edges green, over a dimmed gray image.
    pub fn overlay(&self, image: &Raster<f32>) -> Raster<[u8; 3]> {
        let (w, h) = self.class.dims();
        Raster::from_fn(w, h, |x, y| match self.class.at(x, y) {
            Some(EdgeClass::Discontinuous) => Self::DISCONTINUOUS_RGB,
            Some(EdgeClass::Continuous) => Self::CONTINUOUS_RGB,
            None => {
                let g = image.get(crate::raster::Pixel::new(x as i32, y as i32)).map_or(0.0, |v| v.clamp(0.0, 255.0) * 0.6) as u8;
                [g, g, g]
            }
        })
    }

    pub const DISCONTINUOUS_RGB: [u8; 3] = [255, 0, 0];
    pub const CONTINUOUS_RGB: [u8; 3] = [0, 255, 0];
}

/// Sobel gradient magnitude with clamped borders.
pub fn sobel_magnitude(img: &Raster<f64>) -> Raster<f64> {
    let (w, h) = img.dims();
    Raster::from_fn(w, h, |x, y| {
        let p = |dx: i64, dy: i64| *img.clamped(x as i64 + dx, y as i64 + dy);
        let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        (gx * gx + gy * gy).sqrt()
    })
}

/// Per boundary pixel: the largest gradient magnitude in its `w x w` window.
pub fn window_max_gradient(boundary: &BoundaryMap, gradient: &Raster<f64>, window: usize) -> Raster<f64> {
    let (w, h) = gradient.dims();
    let r = (window / 2) as i64;
    Raster::from_fn(w, h, |x, y| {
        if !*boundary.mask().at(x, y) {
            return 0.0;
        }
        let (x, y) = (x as i64, y as i64);
        let mut g = 0.0f64;
        for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
            for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                g = g.max(*gradient.at(xx as usize, yy as usize));
            }
        }
        g
    })
}

pub fn compute_occlusion_map(
    boundary: &BoundaryMap,
    mono_depth: &Raster<f64>,
    window: usize,
    delta: f64,
    min_cluster: usize,
) -> Result<OcclusionMap> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Parameter(format!(
            "occlusion window must be odd and >= 3, got {window}"
        )));
    }
    if !boundary.mask().same_dims(mono_depth) {
        return Err(Error::Parameter("boundary and mono depth sizes differ".into()));
    }
    let normalized = mono_depth.normalized(MONO_SCALE);
    let gmax = window_max_gradient(boundary, &sobel_magnitude(&normalized), window);
    let mut class = Raster::from_fn(boundary.mask().width(), boundary.mask().height(), |x, y| {
        boundary.mask().at(x, y).then(|| {
            if *gmax.at(x, y) < delta {
                EdgeClass::Continuous
            } else {
                EdgeClass::Discontinuous
            }
        })
    });
    reassign_small_clusters(&mut class, min_cluster);
    Ok(OcclusionMap::from_classes(class))
}

/// 8-connected components of equally labelled boundary pixels.
struct Components {
    id: Raster<u32>,
    size: Vec<usize>,
    class: Vec<EdgeClass>,
    first: Vec<usize>,
}

const NEIGHBORS8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl Components {
    fn label(class: &Raster<Option<EdgeClass>>) -> Self {
        let (w, h) = class.dims();
        let mut id = Raster::filled(w, h, NO_CLUSTER);
        let mut size = Vec::new();
        let mut kinds = Vec::new();
        let mut first = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            let Some(c) = class.data()[start] else { continue };
            if id.data()[start] != NO_CLUSTER {
                continue;
            }
            let cid = size.len() as u32;
            id.data_mut()[start] = cid;
            queue.push_back(start);
            let mut n = 0usize;
            while let Some(i) = queue.pop_front() {
                n += 1;
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if class.data()[j] == Some(c) && id.data()[j] == NO_CLUSTER {
                        id.data_mut()[j] = cid;
                        queue.push_back(j);
                    }
                }
            }
            size.push(n);
            kinds.push(c);
            first.push(start);
        }
        Self {
            id,
            size,
            class: kinds,
            first,
        }
    }
}

/// Flips clusters smaller than `min_cluster` to the opposite label.
///
/// The largest flippable small cluster is flipped first (ties: scan order of
/// its first pixel). A flip happens only when the cluster it merges into, i.e.
/// itself plus every adjacent opposite-label cluster, reaches `min_cluster`;
/// otherwise it is skipped. Repeats until no cluster can be flipped.
pub fn reassign_small_clusters(class: &mut Raster<Option<EdgeClass>>, min_cluster: usize) {
    let comps = Components::label(class);
    let n = comps.size.len();
    if n == 0 {
        return;
    }
    let (w, h) = class.dims();
    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for i in 0..w * h {
        let a = comps.id.data()[i];
        if a == NO_CLUSTER {
            continue;
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let b = comps.id.data()[ny as usize * w + nx as usize];
            if b != NO_CLUSTER && b != a {
                adjacency[a as usize].insert(b as usize);
            }
        }
    }
    // union-find over components; a root carries the live set state
    let mut parent: Vec<usize> = (0..n).collect();
    let mut size = comps.size.clone();
    let mut kind = comps.class.clone();
    let first = comps.first.clone();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    loop {
        let mut best: Option<(usize, usize)> = None;
        for r in 0..n {
            if parent[r] != r || size[r] >= min_cluster {
                continue;
            }
            // adjacent sets are always of the opposite label
            let neigh: BTreeSet<usize> = adjacency[r].iter().map(|&a| find(&mut parent, a)).collect();
            let merged: usize = size[r] + neigh.iter().map(|&a| size[a]).sum::<usize>();
            if merged < min_cluster {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, _)) => size[r] > size[b] || (size[r] == size[b] && first[r] < first[b]),
            };
            if better {
                best = Some((r, merged));
            }
        }
        let Some((r, merged)) = best else { break };
        let neigh: Vec<usize> = adjacency[r]
            .iter()
            .map(|&a| find(&mut parent, a))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let new_kind = kind[r].opposite();
        let mut new_adj = BTreeSet::new();
        let mut new_first = first[r];
        for &a in &neigh {
            parent[a] = r;
            new_first = new_first.min(first[a]);
            for &b in &adjacency[a] {
                new_adj.insert(b);
            }
        }
        let flat: BTreeSet<usize> = new_adj
            .into_iter()
            .map(|b| find(&mut parent, b))
            .filter(|&b| b != r)
            .collect();
        adjacency[r] = flat;
        size[r] = merged;
        kind[r] = new_kind;
        let _ = new_first;
    }
    for i in 0..w * h {
        let c = comps.id.data()[i];
        if c != NO_CLUSTER {
            let r = find(&mut parent, c as usize);
            class.data_mut()[i] = Some(kind[r]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::boundary::extract_boundary;

    fn halves(w: usize, h: usize) -> Raster<u16> {
        Raster::from_fn(w, h, |x, _| if x < w / 2 { 1 } else { 2 })
    }

    #[test]
    fn even_window_is_rejected() {
        let b = extract_boundary(&halves(8, 8));
        let mono = Raster::filled(8, 8, 1.0);
        assert!(matches!(compute_occlusion_map(&b, &mono, 4, 1.8, 12), Err(Error::Parameter(_))));
        assert!(compute_occlusion_map(&b, &mono, 1, 1.8, 12).is_err());
    }

    #[test]
    fn constant_depth_is_all_continuous() {
        let b = extract_boundary(&halves(20, 16));
        let mono = Raster::filled(20, 16, 3.0);
        let occ = compute_occlusion_map(&b, &mono, 11, 1.8, 12).unwrap();
        for (c, &m) in occ.class().data().iter().zip(b.mask().data()) {
            assert_eq!(c.is_some(), m);
            if m {
                assert_eq!(*c, Some(EdgeClass::Continuous));
            }
        }
    }

    #[test]
    fn depth_step_is_discontinuous() {
        let b = extract_boundary(&halves(20, 16));
        let mono = Raster::from_fn(20, 16, |x, _| if x < 10 { 1.0 } else { 50.0 });
        let occ = compute_occlusion_map(&b, &mono, 11, 1.8, 12).unwrap();
        assert!(occ
            .class()
            .data()
            .iter()
            .flatten()
            .all(|&c| c == EdgeClass::Discontinuous));
    }

    #[test]
    fn sobel_of_ramp() {
        let ramp = Raster::from_fn(5, 5, |x, _| 2.0 * x as f64);
        let g = sobel_magnitude(&ramp);
        assert_eq!(*g.at(2, 2), 16.0);
    }

    /// Brute-force reassignment: recompute components from scratch after every flip.
    fn brute_force_reassign(class: &mut Raster<Option<EdgeClass>>, sigma: usize) {
        loop {
            let comps = Components::label(class);
            let mut best: Option<usize> = None;
            for c in 0..comps.size.len() {
                if comps.size[c] >= sigma {
                    continue;
                }
                let mut trial = class.clone();
                for i in 0..trial.len() {
                    if comps.id.data()[i] == c as u32 {
                        trial.data_mut()[i] = Some(comps.class[c].opposite());
                    }
                }
                let after = Components::label(&trial);
                let merged = after.size[after.id.data()[comps.first[c]] as usize];
                if merged < sigma {
                    continue;
                }
                let better = best.map_or(true, |b| {
                    comps.size[c] > comps.size[b]
                        || (comps.size[c] == comps.size[b] && comps.first[c] < comps.first[b])
                });
                if better {
                    best = Some(c);
                }
            }
            let Some(c) = best else { break };
            for i in 0..class.len() {
                if comps.id.data()[i] == c as u32 {
                    class.data_mut()[i] = Some(comps.class[c].opposite());
                }
            }
        }
    }

    #[test]
    fn noise_run_on_a_boundary_is_reassigned() {
        // a 40-pixel vertical boundary column labelled Continuous with a 5-pixel Discontinuous run
        let mut class = Raster::from_fn(5, 40, |x, _| (x == 2).then_some(EdgeClass::Continuous));
        for y in 17..22 {
            *class.at_mut(2, y) = Some(EdgeClass::Discontinuous);
        }
        let mut oracle = class.clone();
        brute_force_reassign(&mut oracle, 12);
        reassign_small_clusters(&mut class, 12);
        assert_eq!(class, oracle);
        assert!(class.data().iter().flatten().all(|&c| c == EdgeClass::Continuous));
    }

    #[test]
    fn isolated_small_cluster_is_kept() {
        let mut class = Raster::from_fn(10, 10, |x, y| {
            (x == 4 && (3..6).contains(&y)).then_some(EdgeClass::Discontinuous)
        });
        let before = class.clone();
        reassign_small_clusters(&mut class, 12);
        assert_eq!(class, before);
    }

    #[test]
    fn random_maps_match_brute_force() {
        let mut s = 0x1234_5678_9abc_def1u64;
        for _ in 0..40 {
            let mut class = Raster::from_fn(24, 24, |_, _| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                match s % 5 {
                    0 | 1 => None,
                    2 | 3 => Some(EdgeClass::Continuous),
                    _ => Some(EdgeClass::Discontinuous),
                }
            });
            let mut oracle = class.clone();
            brute_force_reassign(&mut oracle, 12);
            reassign_small_clusters(&mut class, 12);
            assert_eq!(class, oracle);
            // fixed point: every surviving small cluster would merge into something still small
            let comps = Components::label(&class);
            for c in 0..comps.size.len() {
                if comps.size[c] < 12 {
                    let mut trial = class.clone();
                    for i in 0..trial.len() {
                        if comps.id.data()[i] == c as u32 {
                            trial.data_mut()[i] = Some(comps.class[c].opposite());
                        }
                    }
                    let after = Components::label(&trial);
                    assert!(after.size[after.id.data()[comps.first[c]] as usize] < 12);
                }
            }
        }
    }
}
