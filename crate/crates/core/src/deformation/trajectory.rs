//! Multi-trajectory diffusion: rays cast from a pixel until they meet a depth edge.

use crate::error::{Error, Result};
use crate::guidance::{Crossing, Guidance};
use crate::raster::{Pixel, Raster};

/// Why a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Blocked,
    BudgetExhausted,
    MaxRadius,
    ImageBorder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub origin: Pixel,
    pub direction: usize,
    /// Ray pixels starting at the origin; 8-connected consecutive steps.
    pub pixels: Vec<Pixel>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn endpoint(&self) -> Pixel {
        *self.pixels.last().expect("a trajectory holds at least its origin")
    }
}

/// Integer offsets of `X` rays at angular spacing `360/X` degrees.
///
/// Angles are counter-clockwise from +x in a y-down raster, so direction `i`
/// points along `(cos a, -sin a)`. The direction is scaled so its dominant
/// component is 1 and step `k` lands on `round(k * dir)`: every step moves one
/// pixel along the major axis (8-connected), a longer ray always extends a
/// shorter one, and opposite rays are exact mirror images.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTable {
    rays: usize,
    max_radius: usize,
    offsets: Vec<(i32, i32)>,
}

impl RayTable {
    pub fn new(rays: usize, max_radius: usize) -> Result<Self> {
        if rays < 4 {
            return Err(Error::Parameter(format!("need at least 4 rays, got {rays}")));
        }
        if max_radius < 1 {
            return Err(Error::Parameter("maximum radius must be >= 1".into()));
        }
        let mut offsets = Vec::with_capacity(rays * max_radius);
        for i in 0..rays {
            let a = i as f64 * std::f64::consts::TAU / rays as f64;
            let (mut cx, mut cy) = (a.cos(), -a.sin());
            // snap float noise so axis-aligned rays stay exactly on their axis
            for c in [&mut cx, &mut cy] {
                if c.abs() < 1e-12 {
                    *c = 0.0;
                }
            }
            let m = cx.abs().max(cy.abs());
            let (cx, cy) = (cx / m, cy / m);
            for k in 0..max_radius {
                let k = k as f64;
                offsets.push(((k * cx).round() as i32, (k * cy).round() as i32));
            }
        }
        Ok(Self {
            rays,
            max_radius,
            offsets,
        })
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn max_radius(&self) -> usize {
        self.max_radius
    }

    /// Offset of step `k` (0 = origin) along ray `i`.
    #[inline]
    pub fn offset(&self, i: usize, k: usize) -> (i32, i32) {
        self.offsets[i * self.max_radius + k]
    }

    /// Pixel `k` steps along ray `i` from `origin`.
    #[inline]
    pub fn pixel(&self, origin: Pixel, i: usize, k: usize) -> Pixel {
        let (dx, dy) = self.offset(i, k);
        Pixel::new(origin.x + dx, origin.y + dy)
    }

    /// Walks ray `i` from `origin`, returning its length and stop reason.
    pub fn walk(&self, guidance: &Guidance, origin: Pixel, i: usize) -> (usize, StopReason) {
        let (w, h) = (guidance.width() as i32, guidance.height() as i32);
        let mut prev = origin;
        let mut budget: Option<u32> = None;
        for k in 1..self.max_radius {
            let p = self.pixel(origin, i, k);
            if p.x < 0 || p.y < 0 || p.x >= w || p.y >= h {
                return (k, StopReason::ImageBorder);
            }
            let crossing = guidance.step(prev, p);
            if crossing == Crossing::Blocked {
                return (k, StopReason::Blocked);
            }
            match budget.as_mut() {
                Some(0) => return (k, StopReason::BudgetExhausted),
                Some(b) => *b -= 1,
                None => {
                    if let Crossing::AllowedWithinBudget(e) = crossing {
                        budget = Some(e);
                    }
                }
            }
            prev = p;
        }
        (self.max_radius, StopReason::MaxRadius)
    }
}

/// Default radius cap at a layer of the given size.
pub fn default_max_radius(width: usize, height: usize) -> usize {
    (width.min(height) / 4).max(1)
}

/// Casts `X` rays from `center`. Each stops before the first Discontinuous
/// step, `ε` pixels after its first Continuous crossing, at the radius cap or at
/// the image border; the origin alone has length 1.
pub fn diffuse_trajectories(center: Pixel, table: &RayTable, guidance: &Guidance) -> Result<Vec<Trajectory>> {
    if !guidance.labels().contains(center) {
        return Err(Error::Contract(format!(
            "trajectory centre ({}, {}) outside the {}x{} raster",
            center.x,
            center.y,
            guidance.width(),
            guidance.height()
        )));
    }
    Ok((0..table.rays())
        .map(|i| {
            let (len, stop) = table.walk(guidance, center, i);
            Trajectory {
                origin: center,
                direction: i,
                pixels: (0..len).map(|k| table.pixel(center, i, k)).collect(),
                stop,
            }
        })
        .collect())
}

/// Trajectory lengths of every pixel; a trajectory is always a prefix of its
/// ray, so its length fully describes it.
#[derive(Debug, Clone)]
pub struct TrajectoryField {
    rays: usize,
    lengths: Vec<u16>,
    width: usize,
    height: usize,
}

impl TrajectoryField {
    pub fn compute(table: &RayTable, guidance: &Guidance) -> Self {
        use rayon::prelude::*;
        let (w, h) = (guidance.width(), guidance.height());
        let x = table.rays();
        let mut lengths = vec![0u16; w * h * x];
        lengths
            .par_chunks_mut(w * x)
            .enumerate()
            .for_each(|(y, row)| {
                for px in 0..w {
                    let c = Pixel::new(px as i32, y as i32);
                    for i in 0..x {
                        row[px * x + i] = table.walk(guidance, c, i).0 as u16;
                    }
                }
            });
        Self {
            rays: x,
            lengths,
            width: w,
            height: h,
        }
    }

    #[inline]
    pub fn lengths(&self, p: Pixel) -> &[u16] {
        let i = (p.y as usize * self.width + p.x as usize) * self.rays;
        &self.lengths[i..i + self.rays]
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Mean trajectory length per pixel.
    pub fn mean_length(&self) -> Raster<f32> {
        Raster::from_fn(self.width, self.height, |x, y| {
            let l = self.lengths(Pixel::new(x as i32, y as i32));
            l.iter().map(|&v| v as f32).sum::<f32>() / l.len() as f32
        })
    }
}
