//! Segmentation-guided PatchMatch multi-view stereo.
//!
//! The pipeline restores a dense depth prior per view from sparse points and a
//! monocular depth raster, derives depth-edge guidance from instance
//! segmentation, and runs a multi-scale PatchMatch whose matching patches are
//! deformed along those edges.

pub mod camera;
pub mod config;
pub mod deformation;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod guidance;
pub mod io;
pub mod pm;
pub mod raster;
pub mod restoration;
pub mod rng;
pub mod scene;
pub mod synth;

pub use camera::CameraModel;
pub use config::{Ablation, Config};
pub use error::{Error, Result};
pub use raster::{Pixel, Raster};
pub use scene::{DepthRange, SceneBundle, SparsePointSet, ViewBundle};
