//! Balanced sample allocation along trajectories with texture-aware mapping.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::texture::TexturenessMap;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::guidance::{Crossing, Guidance};
use crate::raster::{Pixel, Raster};

/// Per pixel, the index of its mapping pixel `m_p`: the least textured pixel
/// of the `w x w` window reachable from `p` without a blocked step.
/// Ties go to the pixel nearest `p`, then to the lowest (row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct MappingField {
    map: Raster<u32>,
}

impl MappingField {
    pub fn compute(texture: &TexturenessMap, guidance: &Guidance, window: usize) -> Result<Self> {
        if window < 1 || window % 2 == 0 {
            return Err(Error::Parameter(format!("mapping window must be odd, got {window}")));
        }
        let t = &texture.t;
        if !t.same_dims(guidance.labels()) {
            return Err(Error::Parameter("textureness and guidance sizes differ".into()));
        }
        let (w, h) = t.dims();
        // Only walls block a step, so a wall-free window is reachable in full.
        let mut walls = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                let here = u32::from(guidance.is_wall(Pixel::new(x as i32, y as i32)));
                walls[(y + 1) * (w + 1) + x + 1] = here + walls[y * (w + 1) + x + 1] + walls[(y + 1) * (w + 1) + x] - walls[y * (w + 1) + x];
            }
        }
        let r = window / 2;
        let mut map = Raster::filled(w, h, 0u32);
        map.data_mut()
            .par_chunks_mut(w)
            .enumerate()
            .for_each_init(
                || WindowSearch::new(window),
                |search, (y, row)| {
                    let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
                    for (x, slot) in row.iter_mut().enumerate() {
                        let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                        let count = walls[y1 * (w + 1) + x1] + walls[y0 * (w + 1) + x0] - walls[y0 * (w + 1) + x1] - walls[y1 * (w + 1) + x0];
                        let p = Pixel::new(x as i32, y as i32);
                        let m = if count == 0 { window_argmin(t, p, (x0, x1), (y0, y1)) } else { search.run(t, guidance, p) };
                        *slot = (m.y as usize * w + m.x as usize) as u32;
                    }
                },
            );
        Ok(Self { map })
    }

    /// Every pixel maps to itself.
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            map: Raster::from_fn(width, height, |x, y| (y * width + x) as u32),
        }
    }

    #[inline]
    pub fn index(&self, p: Pixel) -> usize {
        self.map.data()[p.y as usize * self.map.width() + p.x as usize] as usize
    }

    #[inline]
    pub fn mapped(&self, p: Pixel) -> Pixel {
        self.map.pixel_of(self.index(p))
    }

    pub fn raster(&self) -> &Raster<u32> {
        &self.map
    }

    /// `cost` read through the mapping: `out[p] = cost[m_p]`.
    pub fn mapped_cost(&self, cost: &Raster<f32>) -> Raster<f32> {
        let c = cost.data();
        Raster::from_vec(cost.width(), cost.height(), self.map.data().iter().map(|&m| c[m as usize]).collect())
    }
}

/// Least textured pixel of the rectangle under the same ordering as the search.
fn window_argmin(t: &Raster<f64>, p: Pixel, (x0, x1): (usize, usize), (y0, y1): (usize, usize)) -> Pixel {
    let mut best = (t[p], 0i64, p.scan_key(), p);
    for y in y0..y1 {
        for x in x0..x1 {
            let q = Pixel::new(x as i32, y as i32);
            let key = (*t.at(x, y), q.dist2(p), q.scan_key(), q);
            if key.0 < best.0 || (key.0 == best.0 && (key.1, key.2) < (best.1, best.2)) {
                best = key;
            }
        }
    }
    best.3
}

struct WindowSearch {
    size: usize,
    visited: Vec<bool>,
    queue: VecDeque<Pixel>,
}

impl WindowSearch {
    fn new(size: usize) -> Self {
        Self {
            size,
            visited: vec![false; size * size],
            queue: VecDeque::with_capacity(size * size),
        }
    }

    fn run(&mut self, t: &Raster<f64>, g: &Guidance, p: Pixel) -> Pixel {
        let r = (self.size / 2) as i32;
        self.visited.iter_mut().for_each(|v| *v = false);
        let slot = |q: Pixel| ((q.y - p.y + r) as usize) * self.size + (q.x - p.x + r) as usize;
        self.visited[slot(p)] = true;
        self.queue.clear();
        self.queue.push_back(p);
        let mut best = (t[p], 0i64, p.scan_key(), p);
        while let Some(q) = self.queue.pop_front() {
            let key = (t[q], q.dist2(p), q.scan_key(), q);
            if key.0 < best.0 || (key.0 == best.0 && (key.1, key.2) < (best.1, best.2)) {
                best = key;
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let n = Pixel::new(q.x + dx, q.y + dy);
                    if (dx == 0 && dy == 0)
                        || (n.x - p.x).abs() > r
                        || (n.y - p.y).abs() > r
                        || !t.contains(n)
                    {
                        continue;
                    }
                    let s = slot(n);
                    if self.visited[s] || g.step(q, n) == Crossing::Blocked {
                        continue;
                    }
                    self.visited[s] = true;
                    self.queue.push_back(n);
                }
            }
        }
        best.3
    }
}

/// A selected matching sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    /// The pixel used for matching, `m_{p''}`.
    pub pixel: Pixel,
    /// The fragment representative `p''` on the trajectory.
    pub representative: Pixel,
    pub trajectory: usize,
    pub fragment: usize,
}

/// `n_i = ceil(l_i / mean(l) + 1/2)`, evaluated in exact integer arithmetic.
pub fn fragment_counts(lengths: &[usize]) -> Vec<usize> {
    let x = lengths.len();
    let sum: usize = lengths.iter().sum();
    if sum == 0 {
        return vec![0; x];
    }
    // l / (S / X) + 1/2 = (2 l X + S) / (2 S)
    lengths
        .iter()
        .map(|&l| (2 * l * x + sum).div_ceil(2 * sum))
        .collect()
}

/// Fragment `j` (0-based) of a path of `len` pixels split `n` ways. The first
/// `len mod n` fragments hold one pixel more than the rest.
#[inline]
pub fn fragment_bounds(len: usize, n: usize, j: usize) -> (usize, usize) {
    let (q, r) = (len / n, len % n);
    let start = |j: usize| j * q + j.min(r);
    (start(j), start(j + 1))
}

/// Allocation over rays described by lengths and a step-to-pixel function.
/// `mapped_cost(p)` is the cost at the mapping pixel of `p`.
pub(crate) fn allocate_with(
    lengths: &[usize],
    pixel_at: impl Fn(usize, usize) -> Pixel,
    mapped_cost: impl Fn(Pixel) -> f32,
    mapping: &MappingField,
    out: &mut Vec<Sample>,
) {
    out.clear();
    let counts = fragment_counts(lengths);
    for (i, (&len, &n)) in lengths.iter().zip(&counts).enumerate() {
        for j in 0..n {
            let (a, b) = fragment_bounds(len, n, j);
            let mut best: Option<(f32, Pixel)> = None;
            for k in a..b {
                let p = pixel_at(i, k);
                let c = mapped_cost(p);
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, p));
                }
            }
            if let Some((_, rep)) = best {
                out.push(Sample {
                    pixel: mapping.mapped(rep),
                    representative: rep,
                    trajectory: i,
                    fragment: j,
                });
            }
        }
    }
}

/// Splits each trajectory into `n_i` fragments and keeps, per fragment, the
/// pixel whose mapping pixel has the lowest aggregated cost (first wins ties).
pub fn allocate_samples(trajectories: &[Trajectory], cost: &Raster<f32>, mapping: &MappingField) -> Vec<Sample> {
    let lengths: Vec<usize> = trajectories.iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    allocate_with(&lengths, |i, k| trajectories[i].pixels[k], |p| cost.data()[mapping.index(p)], mapping, &mut out);
    out
}
