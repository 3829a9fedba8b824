use crate::cloud::{denormalize, normalize_to_unit_sphere, NormalizationTransform, PointCloud};
use crate::error::{Error, Result};

use super::fps::{fps, fps_points};
use super::kdtree::KdTree;

/// A normalized local neighborhood of a larger cloud.
#[derive(Debug, Clone)]
pub struct Patch {
    /// Normalized patch points, ordered by distance to the seed.
    pub points: PointCloud,
    /// Indices of `points` in the parent cloud.
    pub members: Vec<usize>,
    pub seed_index: usize,
    pub transform: NormalizationTransform,
}

/// Number of patches for a cloud of `n` points.
pub fn patch_count(n: usize, patch_size: usize, coverage_factor: f64) -> usize {
    ((coverage_factor * n as f64 / patch_size as f64).ceil() as usize).max(1)
}

/// Seeds are picked by FPS (starting at `fps_start`); each patch holds the
/// seed's `patch_size` nearest neighbors, normalized to the unit sphere.
pub fn extract_patches(
    cloud: &PointCloud,
    patch_size: usize,
    coverage_factor: f64,
    fps_start: usize,
) -> Result<Vec<Patch>> {
    let n = cloud.len();
    if patch_size > n {
        return Err(Error::InsufficientPoints {
            required: patch_size,
            available: n,
        });
    }
    if patch_size == 0 || !(coverage_factor > 0.0) {
        return Err(Error::InvalidConfig("patch_size and coverage_factor must be positive".into()));
    }
    let count = patch_count(n, patch_size, coverage_factor);
    // With more patches than points FPS runs out of distinct seeds; cycle through them.
    let seeds: Vec<usize> = if count <= n {
        fps(cloud, count, fps_start)?
    } else {
        let order = fps(cloud, n, fps_start)?;
        (0..count).map(|i| order[i % n]).collect()
    };
    let tree = KdTree::build(cloud.points());
    seeds
        .into_iter()
        .map(|seed| {
            let members: Vec<usize> = tree
                .knn_sq(&cloud.points()[seed], patch_size)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            let (points, transform) = normalize_to_unit_sphere(&cloud.subset(&members)?)?;
            Ok(Patch {
                points,
                members,
                seed_index: seed,
                transform,
            })
        })
        .collect()
}

/// Denormalizes each patch output, concatenates, and FPS-downsamples to
/// exactly `target_count` points.
pub fn merge_patches(upsampled: &[(Patch, PointCloud)], target_count: usize, fps_start: usize) -> Result<PointCloud> {
    let mut all = Vec::new();
    for (patch, out) in upsampled {
        all.extend(denormalize(out, &patch.transform)?.into_points());
    }
    if all.len() < target_count {
        return Err(Error::InsufficientPoints {
            required: target_count,
            available: all.len(),
        });
    }
    if target_count == 0 {
        return Err(Error::InvalidConfig("target_count must be positive".into()));
    }
    let keep = fps_points(&all, target_count, fps_start.min(all.len() - 1))?;
    PointCloud::new(keep.into_iter().map(|i| all[i]).collect())
}
