//! Instance segmentation of 3D point clouds through a learned pairwise
//! similarity matrix.
//!
//! A small point network embeds every point; pairwise embedding distances
//! form a similarity matrix whose rows are group proposals. Proposals are
//! pruned by a learned confidence, merged by non-maximum suppression, and
//! stitched across overlapping scene blocks through a voxel grid.

pub mod blockmerge;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod diffmath;
pub mod error;
pub mod evaluate;

pub mod grouping;
pub mod io;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod pointset;
pub mod trainer;
mod util;

pub use error::{Error, Result};
