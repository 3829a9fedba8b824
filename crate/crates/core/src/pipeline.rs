//! End-to-end upsampling: patch → fit → sample → FPS → refine → merge.

use rayon::prelude::*;

use crate::cloud::{normalize_to_unit_sphere, denormalize, PointCloud};
use crate::config::UpsampleConfig;
use crate::error::{Error, Result};
use crate::fitting::fit;
use crate::gaussian::AnisotropicGaussian;
use crate::neighbors::{extract_patches, fps_points, KdTree, Patch};
use crate::refinement::{refine, RefineConfig};
use crate::rng;
use crate::sampling::sample_gaussians;

/// Rate handled by one stage when a rate is realized by chaining.
pub const STAGE_RATE: usize = 4;

#[derive(Debug, Clone)]
pub struct LocalResult {
    pub gaussians: Vec<AnisotropicGaussian>,
    /// FPS-downsampled samples before refinement.
    pub coarse: PointCloud,
    /// `coarse` after refinement, index-aligned with it.
    pub refined: PointCloud,
}

#[derive(Debug, Clone)]
pub struct UpsampleOutput {
    pub cloud: PointCloud,
    /// Output of the last stage with refinement skipped, selecting the same
    /// points as `cloud`.
    pub coarse: PointCloud,
    pub stages: usize,
    pub patches: usize,
}

impl UpsampleConfig {
    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            passes: self.refinement_passes,
            weight: self.refinement_weight,
            normal_source: self.normal_source,
            k_neighbors: self.k_neighbors,
        }
    }
}

/// Stage rates for `rate`: powers of four above four become chained 4×
/// stages, anything else is a single stage.
pub fn stage_plan(rate: usize) -> Vec<usize> {
    let mut r = rate;
    let mut stages = Vec::new();
    while r > 1 && r.is_multiple_of(STAGE_RATE) {
        stages.push(STAGE_RATE);
        r /= STAGE_RATE;
    }
    if r == 1 && !stages.is_empty() {
        stages
    } else {
        vec![rate]
    }
}

/// Upsamples one normalized neighborhood by `rate`: samples
/// `max(sample_rate, rate)` points per Gaussian, keeps `rate · N` by FPS,
/// then refines.
pub fn upsample_local(
    cloud: &PointCloud,
    dense_gt: Option<&PointCloud>,
    cfg: &UpsampleConfig,
    rate: usize,
    seed: u64,
) -> Result<LocalResult> {
    let mut local_cfg = cfg.clone();
    local_cfg.seed = seed;
    local_cfg.sample_rate = cfg.sample_rate.max(rate);
    let k = cfg.k_neighbors.min(cloud.len());
    local_cfg.k_neighbors = k.max(4);
    if cloud.len() < local_cfg.k_neighbors {
        return Err(Error::InsufficientPoints {
            required: local_cfg.k_neighbors,
            available: cloud.len(),
        });
    }
    let fitted = fit(cloud, dense_gt, &local_cfg)?;
    let samples = sample_gaussians(
        &fitted.gaussians,
        local_cfg.sample_rate,
        cfg.truncation_radius,
        rng::key(&[seed, 0x5A]),
    );
    let keep = fps_points(&samples.points, rate * cloud.len(), cfg.fps_start.min(samples.len() - 1))?;
    let coarse = PointCloud::new(keep.iter().map(|&i| samples.points[i]).collect())?;
    let refined = refine(&coarse, &fitted.gaussians, &cfg.refine_config())?;
    Ok(LocalResult {
        gaussians: fitted.gaussians,
        coarse,
        refined,
    })
}

/// Dense target for a patch: the `count` ground-truth points nearest the
/// patch seed, mapped through the patch's normalization.
fn gt_patch(gt_tree: &KdTree, seed_point: &crate::cloud::Point3, count: usize, patch: &Patch) -> Result<PointCloud> {
    let pts = gt_tree
        .knn_sq(seed_point, count)
        .into_iter()
        .map(|(i, _)| patch.transform.apply(&gt_tree.points()[i]))
        .collect();
    PointCloud::new(pts)
}

fn run_stage(
    cloud: &PointCloud,
    dense_gt: Option<&PointCloud>,
    cfg: &UpsampleConfig,
    rate: usize,
    stage: usize,
    use_patches: bool,
) -> Result<(PointCloud, PointCloud, usize)> {
    let target = rate * cloud.len();
    if !use_patches || cloud.len() <= cfg.patch_size {
        let (norm, t) = normalize_to_unit_sphere(cloud)?;
        let gt = dense_gt.map(|g| g.map(|p| t.apply(p))).transpose()?;
        let seed = rng::key(&[cfg.seed, stage as u64, u64::MAX]);
        let local = upsample_local(&norm, gt.as_ref(), cfg, rate, seed)?;
        return Ok((denormalize(&local.refined, &t)?, denormalize(&local.coarse, &t)?, 1));
    }

    let patches = extract_patches(cloud, cfg.patch_size, cfg.coverage_factor, cfg.fps_start)?;
    let gt_tree = dense_gt.map(|g| KdTree::build(g.points()));
    let gt_count = dense_gt.map(|g| (rate * cfg.patch_size).min(g.len())).unwrap_or(0);
    let locals: Vec<LocalResult> = patches
        .par_iter()
        .enumerate()
        .map(|(pi, patch)| {
            let gt = match &gt_tree {
                Some(tree) => Some(gt_patch(tree, &cloud.points()[patch.seed_index], gt_count, patch)?),
                None => None,
            };
            let seed = rng::key(&[cfg.seed, stage as u64, pi as u64]);
            upsample_local(&patch.points, gt.as_ref(), cfg, rate, seed)
        })
        .collect::<Result<_>>()?;

    let mut refined = Vec::new();
    let mut coarse = Vec::new();
    for (patch, local) in patches.iter().zip(&locals) {
        refined.extend(denormalize(&local.refined, &patch.transform)?.into_points());
        coarse.extend(denormalize(&local.coarse, &patch.transform)?.into_points());
    }
    let keep = fps_points(&refined, target, cfg.fps_start.min(refined.len() - 1))?;
    let pick = |pts: &[crate::cloud::Point3]| PointCloud::new(keep.iter().map(|&i| pts[i]).collect());
    Ok((pick(&refined)?, pick(&coarse)?, patches.len()))
}

/// Upsamples `cloud` by `cfg.rate`. Rates that are powers of four above four
/// run as chained 4× stages. `dense_gt` is required by the optimize backend.
pub fn upsample(
    cloud: &PointCloud,
    dense_gt: Option<&PointCloud>,
    cfg: &UpsampleConfig,
    use_patches: bool,
) -> Result<UpsampleOutput> {
    cfg.validate()?;
    let mut current = cloud.clone();
    let mut coarse = cloud.clone();
    let plan = stage_plan(cfg.rate);
    let mut patches = 0;
    for (stage, &rate) in plan.iter().enumerate() {
        let (out, c, n) = run_stage(&current, dense_gt, cfg, rate, stage, use_patches)?;
        current = out;
        coarse = c;
        patches += n;
    }
    Ok(UpsampleOutput {
        cloud: current,
        coarse,
        stages: plan.len(),
        patches,
    })
}
