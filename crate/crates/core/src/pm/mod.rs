//! PatchMatch solver: hypotheses, cost terms, weight optimisation and the
//! multi-scale schedule.

pub mod cost;
pub mod em;
pub mod engine;
pub mod hypothesis;
pub mod refine;

pub use cost::{
    aggregated_cost, color_gradient_error, depth_difference_error, depth_tolerance, laplacian, multi_scale_cost,
    photometric_cost, reprojection_error, Terms,
};
pub use em::{em_update_weights, CostWeights, TermStats};
pub use engine::{reconstruct, view_guidance, Diagnostics, Reconstruction, SweepRecord};
pub use hypothesis::{plane_homography, Hypothesis};
pub use refine::{spherical_gradient_refine, RefineParams};
