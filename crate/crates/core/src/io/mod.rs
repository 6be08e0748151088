//! File formats and the on-disk scene layout.

pub mod layout;
pub mod pfm;
pub mod ply;
pub mod png;

pub use layout::{load_scene, write_scene};
pub use pfm::{read_depth_map, write_depth_map, INVALID_DEPTH};
pub use ply::{read_ply, write_ply, CloudPoint};
