//! Spatial search and rate control.

mod fps;
mod kdtree;
mod patch;

pub use fps::{fps, fps_points};
pub use kdtree::{KdTree, SpatialIndex};
pub use patch::{extract_patches, merge_patches, patch_count, Patch};

use crate::cloud::{Point3, PointCloud};
use crate::error::Result;

/// Exact k nearest neighbors of `query`, ascending by distance.
pub fn knn(index: &SpatialIndex, query: &Point3, k: usize) -> Result<Vec<(usize, f64)>> {
    index.knn(query, k)
}

pub fn build_index(cloud: &PointCloud) -> SpatialIndex {
    KdTree::build(cloud.points())
}
