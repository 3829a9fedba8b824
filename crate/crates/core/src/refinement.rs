//! Tangent-plane refinement of coarse samples.
//!
//! One pass moves every point `p` along a local normal `n` toward an anchor
//! plane through `a`: `p' = p − w ((p − a)·n) n`. Normals and anchors come
//! either from the nearest fitted Gaussian (smallest axis, mean) or from a
//! PCA of the point's nearest coarse neighbors (smallest axis, centroid).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud, Vec3};
use crate::config::NormalSource;
use crate::error::{Error, Result};
use crate::fitting::{principal_frame, scatter};
use crate::gaussian::AnisotropicGaussian;
use crate::neighbors::KdTree;

/// Frames whose smallest/middle spread ratio exceeds this have no usable
/// tangent plane; points relying on them are left in place for the pass.
pub const ISOTROPY_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub passes: usize,
    pub weight: f64,
    pub normal_source: NormalSource,
    pub k_neighbors: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            passes: 2,
            weight: 1.0,
            normal_source: NormalSource::GaussianAxis,
            k_neighbors: 16,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::InvalidConfig(format!("refinement weight {} not in [0, 1]", self.weight)));
        }
        if self.normal_source == NormalSource::LocalPca && self.k_neighbors < 4 {
            return Err(Error::InvalidConfig("local PCA refinement needs k >= 4".into()));
        }
        Ok(())
    }
}

#[inline]
fn project(p: &Point3, anchor: &Point3, normal: &Vec3, w: f64) -> Point3 {
    p - normal * (w * (p - anchor).dot(normal))
}

fn gaussian_pass(points: &[Point3], gaussians: &[AnisotropicGaussian], tree: &KdTree, w: f64) -> Vec<Point3> {
    let frames: Vec<Option<Vec3>> = gaussians
        .iter()
        .map(|g| (g.flatness_ratio() <= ISOTROPY_LIMIT).then(|| g.smallest_axis().1))
        .collect();
    points
        .par_iter()
        .map(|p| {
            let (j, _) = tree.nearest(p);
            match &frames[j] {
                Some(n) => project(p, &gaussians[j].mean, n, w),
                None => *p,
            }
        })
        .collect()
}

fn pca_pass(points: &[Point3], k: usize, w: f64) -> Vec<Point3> {
    let tree = KdTree::build(points);
    points
        .par_iter()
        .map(|p| {
            let nbrs: Vec<Point3> = tree.knn_sq(p, k).into_iter().map(|(i, _)| points[i]).collect();
            let (anchor, cov) = scatter(&nbrs);
            let (values, frame) = principal_frame(&cov);
            let (mid, low) = (values[1].max(0.0).sqrt(), values[2].max(0.0).sqrt());
            if mid <= 0.0 || low / mid > ISOTROPY_LIMIT {
                return *p;
            }
            project(p, &anchor, &frame.column(2).into_owned(), w)
        })
        .collect()
}

/// Applies `cfg.passes` refinement passes. Output is index-aligned with
/// `coarse`; `passes == 0` or `weight == 0` returns the input unchanged.
pub fn refine(coarse: &PointCloud, gaussians: &[AnisotropicGaussian], cfg: &RefineConfig) -> Result<PointCloud> {
    cfg.validate()?;
    if cfg.normal_source == NormalSource::GaussianAxis && gaussians.is_empty() {
        return Err(Error::EmptyInput("gaussians"));
    }
    if cfg.passes == 0 || cfg.weight == 0.0 {
        return Ok(coarse.clone());
    }
    let mut pts = coarse.points().to_vec();
    match cfg.normal_source {
        NormalSource::GaussianAxis => {
            let means: Vec<Point3> = gaussians.iter().map(|g| g.mean).collect();
            let tree = KdTree::build(&means);
            for _ in 0..cfg.passes {
                pts = gaussian_pass(&pts, gaussians, &tree, cfg.weight);
            }
        }
        NormalSource::LocalPca => {
            let k = cfg.k_neighbors.min(pts.len());
            for _ in 0..cfg.passes {
                pts = pca_pass(&pts, k, cfg.weight);
            }
        }
    }
    PointCloud::new(pts)
}
