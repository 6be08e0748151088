//! Edge-aligned deformed patches: trajectories, balanced samples and
//! propagation candidates.

pub mod propagation;
pub mod sampling;
pub mod texture;
pub mod trajectory;

pub use propagation::propagation_candidates;
pub use sampling::{allocate_samples, fragment_bounds, fragment_counts, MappingField, Sample};
pub use texture::{compute_textureness, TexturenessMap};
pub use trajectory::{default_max_radius, diffuse_trajectories, RayTable, StopReason, Trajectory, TrajectoryField};

use crate::error::Result;
use crate::guidance::Guidance;
use crate::raster::{Pixel, Raster};

/// Side of the fixed square patch used when deformation is disabled.
pub const SQUARE_PATCH: i32 = 11;
/// Sampling stride inside the square patch.
pub const SQUARE_STRIDE: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DeformedPatch {
    pub center: Pixel,
    pub trajectories: Vec<Trajectory>,
    pub samples: Vec<Sample>,
}

/// Builds the full patch of one pixel.
pub fn build_patch(
    center: Pixel,
    table: &RayTable,
    guidance: &Guidance,
    cost: &Raster<f32>,
    mapping: &MappingField,
) -> Result<DeformedPatch> {
    let trajectories = diffuse_trajectories(center, table, guidance)?;
    let samples = allocate_samples(&trajectories, cost, mapping);
    Ok(DeformedPatch {
        center,
        trajectories,
        samples,
    })
}

/// Precomputed per-layer patch data: trajectory lengths and mapping pixels.
#[derive(Debug, Clone)]
pub struct PatchField {
    table: RayTable,
    field: TrajectoryField,
    mapping: MappingField,
    lengths_scratch: usize,
}

impl PatchField {
    pub fn compute(guidance: &Guidance, texture: &TexturenessMap, rays: usize, window: usize) -> Result<Self> {
        let table = RayTable::new(rays, default_max_radius(guidance.width(), guidance.height()))?;
        let field = TrajectoryField::compute(&table, guidance);
        let mapping = MappingField::compute(texture, guidance, window)?;
        Ok(Self {
            table,
            field,
            mapping,
            lengths_scratch: rays,
        })
    }

    pub fn table(&self) -> &RayTable {
        &self.table
    }

    pub fn field(&self) -> &TrajectoryField {
        &self.field
    }

    pub fn mapping(&self) -> &MappingField {
        &self.mapping
    }

    fn lengths(&self, p: Pixel) -> ([usize; 64], usize) {
        let mut out = [0usize; 64];
        let l = self.field.lengths(p);
        for (o, &v) in out.iter_mut().zip(l) {
            *o = v as usize;
        }
        (out, self.lengths_scratch.min(64))
    }

    /// Samples of the patch at `p` under the given cost field.
    pub fn samples(&self, p: Pixel, cost: &Raster<f32>, out: &mut Vec<Sample>) {
        let (l, n) = self.lengths(p);
        sampling::allocate_with(&l[..n], |i, k| self.table.pixel(p, i, k), |q| cost.data()[self.mapping.index(q)], &self.mapping, out);
    }

    /// [`Self::samples`] with `mapped` from [`MappingField::mapped_cost`],
    /// for callers that allocate many patches under one cost field.
    pub fn samples_mapped(&self, p: Pixel, mapped: &Raster<f32>, out: &mut Vec<Sample>) {
        let (l, n) = self.lengths(p);
        let w = mapped.width();
        sampling::allocate_with(&l[..n], |i, k| self.table.pixel(p, i, k), |q| mapped.data()[q.y as usize * w + q.x as usize], &self.mapping, out);
    }

    pub fn candidates(&self, p: Pixel, cost: &Raster<f32>, out: &mut Vec<Pixel>) -> Result<()> {
        let (l, n) = self.lengths(p);
        propagation::candidates_with(p, &l[..n], |i, k| self.table.pixel(p, i, k), cost, out)
    }

    /// Mean trajectory length at `p`.
    pub fn mean_length(&self, p: Pixel) -> f32 {
        let l = self.field.lengths(p);
        l.iter().map(|&v| v as f32).sum::<f32>() / l.len() as f32
    }

    pub fn patch(&self, p: Pixel, guidance: &Guidance, cost: &Raster<f32>) -> Result<DeformedPatch> {
        build_patch(p, &self.table, guidance, cost, &self.mapping)
    }
}

/// Sample offsets of the fixed square patch.
pub fn square_offsets() -> Vec<(i32, i32)> {
    let r = SQUARE_PATCH / 2;
    let steps: Vec<i32> = (-r..=r).step_by(SQUARE_STRIDE as usize).collect();
    let mut out = Vec::with_capacity(steps.len() * steps.len());
    for &dy in &steps {
        for &dx in &steps {
            out.push((dx, dy));
        }
    }
    out
}

/// Overlay of one patch on its image: trajectories green, endpoints yellow,
/// samples red, the centre blue.
pub fn patch_overlay(image: &Raster<f32>, patch: &DeformedPatch) -> Raster<[u8; 3]> {
    let mut out = image.map(|&v| {
        let g = (v.clamp(0.0, 255.0) * 0.6) as u8;
        [g, g, g]
    });
    for t in &patch.trajectories {
        for &p in &t.pixels {
            out[p] = [0, 200, 0];
        }
    }
    for t in &patch.trajectories {
        out[t.endpoint()] = [255, 255, 0];
    }
    for s in &patch.samples {
        out[s.pixel] = [255, 0, 0];
    }
    out[patch.center] = [0, 0, 255];
    out
}
