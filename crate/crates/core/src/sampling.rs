//! Reparameterized sampling with Mahalanobis-ball truncation.
//!
//! Each sample is `μ + A ε` with `A = R · diag(s)` and `ε ~ N(0, I)`
//! conditioned on `‖ε‖ ≤ truncation_radius`. Rejected draws are replaced
//! by fresh ones (up to [`MAX_REDRAWS`]), then radially clamped.

use rayon::prelude::*;

use crate::cloud::{Point3, PointCloud, Vec3};
use crate::error::Result;
use crate::gaussian::AnisotropicGaussian;
use crate::rng;

pub const MAX_REDRAWS: u32 = 64;

/// Scales below this are treated as this value when whitening.
pub const WHITEN_FLOOR: f64 = 1e-12;

/// `rate` samples per Gaussian, stored Gaussian-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseCloud {
    pub points: Vec<Point3>,
    pub parent_index: Vec<usize>,
    pub rate: usize,
}

impl CoarseCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.points.clone())
    }
}

/// One truncated whitened draw for slot `(gaussian, sample)` of stream `seed`.
pub fn truncated_normal(seed: u64, gaussian: usize, sample: usize, truncation_radius: f64) -> Vec3 {
    let mut last = Vec3::zeros();
    for redraw in 0..=MAX_REDRAWS {
        let k = rng::key(&[seed, gaussian as u64, sample as u64, redraw as u64]);
        let e = Vec3::from(rng::normal3(k));
        if e.norm() <= truncation_radius {
            return e;
        }
        last = e;
    }
    last * (truncation_radius / last.norm())
}

/// Whitened noise for `n` Gaussians × `rate` samples, Gaussian-major.
pub fn draw_noise(n: usize, rate: usize, truncation_radius: f64, seed: u64) -> Vec<Vec3> {
    (0..n * rate)
        .into_par_iter()
        .map(|slot| truncated_normal(seed, slot / rate, slot % rate, truncation_radius))
        .collect()
}

/// Applies `x = μ + A ε` for Gaussian-major noise `eps` (`rate` per Gaussian).
pub fn transform_noise(gaussians: &[AnisotropicGaussian], eps: &[Vec3], rate: usize) -> CoarseCloud {
    let transforms: Vec<_> = gaussians.iter().map(|g| g.transform()).collect();
    let (points, parent_index) = eps
        .iter()
        .enumerate()
        .map(|(slot, e)| {
            let gi = slot / rate;
            (gaussians[gi].mean + transforms[gi] * e, gi)
        })
        .unzip();
    CoarseCloud {
        points,
        parent_index,
        rate,
    }
}

/// Draws `rate` points from every Gaussian. Identical inputs and seed give
/// bit-identical output.
pub fn sample_gaussians(
    gaussians: &[AnisotropicGaussian],
    rate: usize,
    truncation_radius: f64,
    seed: u64,
) -> CoarseCloud {
    let eps = draw_noise(gaussians.len(), rate, truncation_radius, seed);
    transform_noise(gaussians, &eps, rate)
}

/// Inverse of the sampling transform: `diag(s)⁻¹ Rᵀ (x − μ)`.
pub fn whiten(x: &Point3, g: &AnisotropicGaussian) -> Vec3 {
    let local = g.rotation_matrix().transpose() * (x - g.mean);
    let s = g.scales.0;
    Vec3::new(
        local[0] / s[0].max(WHITEN_FLOOR),
        local[1] / s[1].max(WHITEN_FLOOR),
        local[2] / s[2].max(WHITEN_FLOOR),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{mahalanobis_sq, ScaleTriple, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gaussian(rng: &mut impl Rng) -> AnisotropicGaussian {
        let q = UnitQuaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .unwrap();
        AnisotropicGaussian::new(
            Point3::new(rng.random(), rng.random(), rng.random()),
            ScaleTriple([rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)]),
            q,
            0,
        )
    }

    #[test]
    fn zero_scales_return_means() {
        let g = AnisotropicGaussian::new(Point3::new(1.0, 2.0, 3.0), ScaleTriple([0.0; 3]), UnitQuaternion::IDENTITY, 0);
        let c = sample_gaussians(&[g, g], 5, 2.0, 1);
        assert_eq!(c.len(), 10);
        assert!(c.points.iter().all(|p| *p == g.mean));
        assert_eq!(c.parent_index, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn whiten_examples() {
        let g = AnisotropicGaussian::new(Point3::new(1.0, 1.0, 1.0), ScaleTriple([1.0; 3]), UnitQuaternion::IDENTITY, 0);
        assert_eq!(whiten(&g.mean, &g), Vec3::zeros());
        assert_eq!(whiten(&Point3::new(2.0, 3.0, 4.0), &g), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn whiten_round_trip_and_mahalanobis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = random_gaussian(&mut rng);
            let e = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let x = g.mean + g.transform() * e;
            let w = whiten(&x, &g);
            assert!((w - e).amax() < 1e-9);
            assert!((w.norm_squared() - mahalanobis_sq(&x, &g).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_bound_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gs: Vec<_> = (0..20).map(|_| random_gaussian(&mut rng)).collect();
        let a = sample_gaussians(&gs, 50, 2.0, 99);
        let b = sample_gaussians(&gs, 50, 2.0, 99);
        assert_eq!(a, b);
        for (p, &pi) in a.points.iter().zip(&a.parent_index) {
            assert!(whiten(p, &gs[pi]).norm() <= 2.0 + 1e-9);
        }
        assert_ne!(a, sample_gaussians(&gs, 50, 2.0, 100));
    }

    #[test]
    fn tiny_radius_falls_back_to_clamp() {
        // acceptance of a 1e-3 ball is ~1e-10; every draw is clamped
        let e = truncated_normal(1, 0, 0, 1e-3);
        assert!((e.norm() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = random_gaussian(&mut rng);
        let q = UnitQuaternion::new(0.3, -0.5, 0.2, 0.7).unwrap();
        let qm = q.to_rotation_matrix();
        let rotated = AnisotropicGaussian::new(
            Point3::from(qm * g.mean.coords),
            g.scales,
            UnitQuaternion::from_rotation_matrix(&(qm * g.rotation_matrix())).unwrap(),
            0,
        );
        let a = sample_gaussians(&[g], 100, 2.0, 5);
        let b = sample_gaussians(&[rotated], 100, 2.0, 5);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((qm * p.coords - q.coords).amax() < 1e-9);
        }
    }

    fn empirical_moments(pts: &[Point3]) -> (Point3, nalgebra::Matrix3<f64>) {
        let n = pts.len() as f64;
        let mean = Point3::from(pts.iter().map(|p| p.coords).sum::<Vec3>() / n);
        let cov = pts.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<nalgebra::Matrix3<f64>>() / n;
        (mean, cov)
    }

    /// Covariance of 10⁶ accepted draws from plain rejection sampling with
    /// an unrelated generator.
    fn rejection_oracle(radius: f64) -> nalgebra::Matrix3<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
        let mut acc = nalgebra::Matrix3::zeros();
        let mut kept = 0;
        while kept < 1_000_000 {
            let e = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            if e.norm() <= radius {
                acc += e * e.transpose();
                kept += 1;
            }
        }
        acc / kept as f64
    }

    #[test]
    fn untruncated_law_matches_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let unit = AnisotropicGaussian::new(Point3::origin(), ScaleTriple::new([1.0; 3]).unwrap(), UnitQuaternion::IDENTITY, 0);
        for g in [unit, random_gaussian(&mut rng)] {
            let out = sample_gaussians(&[g], 100_000, f64::INFINITY, 5);
            let (mean, cov) = empirical_moments(&out.points);
            let want = g.covariance();
            assert!((mean - g.mean).norm() < 0.02 * g.scales.max());
            let rel = (cov - want).norm() / want.norm();
            assert!(rel < 0.05, "relative Frobenius error {rel}");
        }
    }

    #[test]
    fn truncated_law_matches_rejection_oracle() {
        let g = AnisotropicGaussian::new(Point3::origin(), ScaleTriple::new([1.0; 3]).unwrap(), UnitQuaternion::IDENTITY, 0);
        let out = sample_gaussians(&[g], 100_000, 2.0, 6);
        assert!(out.points.iter().all(|p| whiten(p, &g).norm() <= 2.0 + 1e-9));
        let (_, cov) = empirical_moments(&out.points);
        let eig = cov.symmetric_eigenvalues();
        assert!(eig.iter().all(|&v| v < 1.0), "{eig:?}");
        let oracle = rejection_oracle(2.0);
        let rel = (cov - oracle).norm() / oracle.norm();
        assert!(rel < 0.02, "relative Frobenius error {rel}");
    }
}
