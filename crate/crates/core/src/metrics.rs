//! Evaluation metrics and input perturbations.
//!
//! Chamfer distance uses squared distances averaged per side; Hausdorff
//! uses unsquared distances; point-to-surface is the mean unsquared
//! distance from each point to the mesh.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::mesh::{Bvh, TriangleMesh};
use crate::neighbors::{fps, KdTree};

/// Nearest squared distance from each of `from` to the set `to`.
pub fn nearest_sq_dists(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    let tree = KdTree::build(to);
    from.par_iter().map(|p| tree.nearest(p).1).collect()
}

pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    let pq = nearest_sq_dists(p.points(), q.points());
    let qp = nearest_sq_dists(q.points(), p.points());
    Ok(mean(&pq) + mean(&qp))
}

pub fn hausdorff(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    let pq = nearest_sq_dists(p.points(), q.points());
    let qp = nearest_sq_dists(q.points(), p.points());
    let m = pq.iter().chain(&qp).copied().fold(0.0, f64::max);
    Ok(m.sqrt())
}

pub fn p2f(p: &PointCloud, mesh: &TriangleMesh) -> Result<f64> {
    let bvh = Bvh::build(mesh)?;
    let d: Vec<f64> = p
        .points()
        .par_iter()
        .map(|x| bvh.closest_dist_sq(x).sqrt())
        .collect();
    Ok(mean(&d))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Adds independent `N(0, tau²)` noise to every coordinate.
pub fn add_noise(cloud: &PointCloud, tau: f64, seed: u64) -> Result<PointCloud> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise tau must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, tau).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = cloud
        .points()
        .iter()
        .map(|p| {
            let dx = normal.sample(&mut rng);
            let dy = normal.sample(&mut rng);
            let dz = normal.sample(&mut rng);
            Point3::new(p.x + dx, p.y + dy, p.z + dz)
        })
        .collect();
    PointCloud::new(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsifyMode {
    Random,
    Fps,
}

/// Keeps exactly `m` points. Random mode samples without replacement and
/// keeps the original relative order; FPS mode keeps FPS order from index 0.
pub fn sparsify(cloud: &PointCloud, m: usize, mode: SparsifyMode, seed: u64) -> Result<PointCloud> {
    let n = cloud.len();
    if m > n {
        return Err(Error::InsufficientPoints {
            required: m,
            available: n,
        });
    }
    let idx = match mode {
        SparsifyMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        SparsifyMode::Fps => fps(cloud, m, 0)?,
    };
    cloud.subset(&idx)
}

/// Metrics for one prediction, in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub cd: f64,
    pub hd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2f: Option<f64>,
    pub pred_points: usize,
    pub gt_points: usize,
    /// Tables display values multiplied by this factor.
    pub display_scale: f64,
}

impl MetricReport {
    pub fn compute(pred: &PointCloud, gt: &PointCloud, mesh: Option<&TriangleMesh>) -> Result<Self> {
        Ok(Self {
            schema_version: 1,
            cd: chamfer(pred, gt)?,
            hd: hausdorff(pred, gt)?,
            p2f: mesh.map(|m| p2f(pred, m)).transpose()?,
            pred_points: pred.len(),
            gt_points: gt.len(),
            display_scale: 1e3,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(c: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_xyz(c).unwrap()
    }

    fn random_cloud(n: usize, rng: &mut impl Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn chamfer_examples() {
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&p, &q).unwrap(), 2.0);
        assert_eq!(chamfer(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_examples() {
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let q = cloud(&[[3.0, 4.0, 0.0]]);
        assert_eq!(hausdorff(&p, &q).unwrap(), 5.0);
        assert_eq!(hausdorff(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn p2f_face_projection() {
        let mesh = TriangleMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(p2f(&cloud(&[[0.0, 0.0, 1.0]]), &mesh).unwrap(), 1.0);
        let verts = PointCloud::new(mesh.vertices().to_vec()).unwrap();
        assert_eq!(p2f(&verts, &mesh).unwrap(), 0.0);
        let empty = TriangleMesh::new(mesh.vertices().to_vec(), vec![]).unwrap();
        assert!(matches!(p2f(&verts, &empty), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn noise_zero_is_identity_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = random_cloud(100, &mut rng);
        assert_eq!(add_noise(&c, 0.0, 5).unwrap(), c);
        assert_eq!(add_noise(&c, 0.01, 5).unwrap(), add_noise(&c, 0.01, 5).unwrap());
        assert_ne!(add_noise(&c, 0.01, 5).unwrap(), add_noise(&c, 0.01, 6).unwrap());
    }

    #[test]
    fn noise_std_is_in_chi_square_band() {
        let c = cloud(&vec![[0.0; 3]; 2048]);
        let noisy = add_noise(&c, 0.01, 1234).unwrap();
        for axis in 0..3 {
            let v: Vec<f64> = noisy.points().iter().map(|p| p[axis]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            let sd = var.sqrt();
            assert!((0.0094..=0.0106).contains(&sd), "axis {axis}: {sd}");
        }
    }

    #[test]
    fn sparsify_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(2048, &mut rng);
        let s = sparsify(&c, 256, SparsifyMode::Random, 3).unwrap();
        assert_eq!(s.len(), 256);
        assert_eq!(s, sparsify(&c, 256, SparsifyMode::Random, 3).unwrap());
        for p in s.points() {
            assert!(c.points().contains(p));
        }
        let all = sparsify(&c, 2048, SparsifyMode::Random, 3).unwrap();
        assert_eq!(all, c);
        let f = sparsify(&c, 100, SparsifyMode::Fps, 0).unwrap();
        let idx = fps(&c, 100, 0).unwrap();
        assert_eq!(f, c.subset(&idx).unwrap());
        assert!(matches!(sparsify(&c, 4096, SparsifyMode::Fps, 0), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn report_includes_p2f_only_with_mesh() {
        let p = cloud(&[[0.0, 0.0, 1.0]]);
        let r = MetricReport::compute(&p, &p, None).unwrap();
        assert!(r.p2f.is_none());
        let mesh = TriangleMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let r = MetricReport::compute(&p, &p, Some(&mesh)).unwrap();
        assert_eq!(r.p2f, Some(1.0));
    }
}
