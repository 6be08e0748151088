//! Depth-edge guidance: segmentation boundaries, their continuity labels and
//! the crossing rule trajectories obey.

pub mod boundary;
pub mod occlusion;

pub use boundary::{extract_boundary, BoundaryMap};
pub use occlusion::{compute_occlusion_map, EdgeClass, OcclusionMap};

use crate::error::{Error, Result};
use crate::raster::{Pixel, Raster};

/// How boundary labels are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeMode {
    /// Discontinuous edges are walls, continuous edges are crossed on a budget.
    #[default]
    DualCategory,
    /// Every boundary pixel is a wall (occlusion map disabled).
    AllStrict,
    /// Every boundary pixel is crossed on a budget (strict constraint disabled).
    AllFlexible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgePolicy {
    pub epsilon_base: u32,
    pub mode: EdgeMode,
}

impl Default for EdgePolicy {
    fn default() -> Self {
        Self {
            epsilon_base: 8,
            mode: EdgeMode::DualCategory,
        }
    }
}

impl EdgePolicy {
    /// Crossing budget at pyramid layer `n`: `base * 2^n` pixels.
    pub fn epsilon(&self, layer: usize) -> u32 {
        self.epsilon_base << layer
    }

    pub fn effective_class(&self, c: Option<EdgeClass>) -> Option<EdgeClass> {
        match (self.mode, c) {
            (_, None) => None,
            (EdgeMode::DualCategory, c) => c,
            (EdgeMode::AllStrict, Some(_)) => Some(EdgeClass::Discontinuous),
            (EdgeMode::AllFlexible, Some(_)) => Some(EdgeClass::Continuous),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Blocked,
    Allowed,
    /// The step crosses a continuous edge; the walker may continue for this many pixels.
    AllowedWithinBudget(u32),
}

/// Guidance of one view at one pyramid layer, with the edge policy already applied.
#[derive(Debug, Clone)]
pub struct Guidance {
    labels: Raster<u16>,
    class: Raster<Option<EdgeClass>>,
    layer: usize,
    epsilon: u32,
}

impl Guidance {
    pub fn new(labels: Raster<u16>, occ: &OcclusionMap, policy: &EdgePolicy, layer: usize) -> Result<Self> {
        if !labels.same_dims(occ.class()) {
            return Err(Error::Parameter("labels and occlusion map sizes differ".into()));
        }
        Ok(Self {
            class: occ.class().map(|&c| policy.effective_class(c)),
            labels,
            layer,
            epsilon: policy.epsilon(layer),
        })
    }

    /// Builds boundary and occlusion maps from labels and monocular depth.
    pub fn build(
        labels: Raster<u16>,
        mono_depth: &Raster<f64>,
        window: usize,
        delta: f64,
        min_cluster: usize,
        policy: &EdgePolicy,
        layer: usize,
    ) -> Result<Self> {
        let boundary = extract_boundary(&labels);
        let occ = compute_occlusion_map(&boundary, mono_depth, window, delta, min_cluster)?;
        Self::new(labels, &occ, policy, layer)
    }

    /// Guidance with no edges at all: every step is allowed.
    pub fn unconstrained(width: usize, height: usize, layer: usize) -> Self {
        Self {
            labels: Raster::filled(width, height, 1),
            class: Raster::filled(width, height, None),
            layer,
            epsilon: 8 << layer,
        }
    }

    pub fn labels(&self) -> &Raster<u16> {
        &self.labels
    }

    pub fn class(&self) -> &Raster<Option<EdgeClass>> {
        &self.class
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn epsilon(&self) -> u32 {
        self.epsilon
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    #[inline]
    pub fn is_wall(&self, p: Pixel) -> bool {
        matches!(self.class.get(p), Some(Some(EdgeClass::Discontinuous)))
    }

    /// Crossing rule for an in-raster 8-adjacent step; unchecked.
    #[inline]
    pub fn step(&self, from: Pixel, to: Pixel) -> Crossing {
        let w = self.labels.width();
        let fi = from.y as usize * w + from.x as usize;
        let ti = to.y as usize * w + to.x as usize;
        let (cf, ct) = (self.class.data()[fi], self.class.data()[ti]);
        let label_change = self.labels.data()[fi] != self.labels.data()[ti];
        match (cf, ct) {
            (_, Some(EdgeClass::Discontinuous)) => Crossing::Blocked,
            (Some(EdgeClass::Discontinuous), _) if label_change => Crossing::Blocked,
            (_, Some(EdgeClass::Continuous)) => Crossing::AllowedWithinBudget(self.epsilon),
            (Some(EdgeClass::Continuous), _) if label_change => {
                Crossing::AllowedWithinBudget(self.epsilon)
            }
            _ => Crossing::Allowed,
        }
    }
}

/// Checked form of [`Guidance::step`].
///
/// The guidance already carries the layer's ε; `layer` must match it.
pub fn crossing_allowance(guidance: &Guidance, from: Pixel, to: Pixel, layer: usize) -> Result<Crossing> {
    if !from.is_adjacent8(to) {
        return Err(Error::Contract(format!(
            "crossing_allowance needs 8-adjacent pixels, got ({}, {}) -> ({}, {})",
            from.x, from.y, to.x, to.y
        )));
    }
    if !guidance.labels.contains(from) || !guidance.labels.contains(to) {
        return Err(Error::Contract("crossing_allowance outside the raster".into()));
    }
    if layer != guidance.layer {
        return Err(Error::Contract(format!(
            "guidance built for layer {}, queried at layer {layer}",
            guidance.layer
        )));
    }
    Ok(guidance.step(from, to))
}
