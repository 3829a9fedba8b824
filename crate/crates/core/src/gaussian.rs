//! Anisotropic Gaussian primitives.
//!
//! A Gaussian is stored as mean, per-axis scales `s` and a rotation `R`.
//! The covariance is `Σ = R S Sᵀ Rᵀ` with `S = diag(s)`, which is symmetric
//! positive semi-definite by construction. Sampling and whitening use the
//! square-root factor `A = R S` (so that `A Aᵀ = Σ`).

use nalgebra::{Matrix3, Vector4};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud, Vec3};
use crate::config::AlignmentForm;
use crate::error::{Error, Result};
use crate::neighbors::KdTree;

/// Regularization added to `Σ` before inversion in the Mahalanobis form.
pub const MAHALANOBIS_RIDGE: f64 = 1e-8;

/// Unit quaternion, scalar first.
///
/// Construction normalizes and fixes the sign so that `w > 0`, or when
/// `w == 0`, the first nonzero of `(x, y, z)` is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        let (mut w, mut x, mut y, mut z) = (w / n, x / n, y / n, z / n);
        let flip = if w != 0.0 {
            w < 0.0
        } else {
            [x, y, z].into_iter().find(|c| *c != 0.0).is_some_and(|c| c < 0.0)
        };
        if flip {
            (w, x, y, z) = (-w, -x, -y, -z);
        }
        Ok(Self { w, x, y, z })
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        rotation_from_unit(self.w, self.x, self.y, self.z)
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Vector4::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Vector4::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Vector4::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Vector4::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        Self::new(q[0], q[1], q[2], q[3])
    }
}

/// Rotation matrix of an already-normalized quaternion.
pub(crate) fn rotation_from_unit(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix for an arbitrary nonzero quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: [f64; 4]) -> Result<Matrix3<f64>> {
    Ok(UnitQuaternion::from_array(q)?.to_rotation_matrix())
}

/// Per-axis standard deviations (the diagonal of `S`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTriple(pub [f64; 3]);

impl ScaleTriple {
    pub fn new(s: [f64; 3]) -> Result<Self> {
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!("scales must be finite and >= 0, got {s:?}")));
        }
        Ok(Self(s))
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicGaussian {
    pub mean: Point3,
    pub scales: ScaleTriple,
    pub rotation: UnitQuaternion,
    /// Index of the input point this Gaussian was fit around.
    pub source_index: usize,
}

impl AnisotropicGaussian {
    pub fn new(mean: Point3, scales: ScaleTriple, rotation: UnitQuaternion, source_index: usize) -> Self {
        Self {
            mean,
            scales,
            rotation,
            source_index,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    /// Square-root factor `A = R · diag(s)`.
    pub fn transform(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = self.scales.0;
        Matrix3::from_columns(&[r.column(0) * s[0], r.column(1) * s[1], r.column(2) * s[2]])
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        build_covariance(self)
    }

    /// Unit axis of the smallest scale, together with that axis' index.
    /// Ties go to the lower axis index.
    pub fn smallest_axis(&self) -> (usize, Vec3) {
        let s = self.scales.0;
        let mut best = 0;
        for i in 1..3 {
            if s[i] < s[best] {
                best = i;
            }
        }
        (best, self.rotation_matrix().column(best).into_owned())
    }

    /// Ratio of the smallest to the middle scale, in `[0, 1]`.
    pub fn flatness_ratio(&self) -> f64 {
        let mut s = self.scales.0;
        s.sort_by(f64::total_cmp);
        if s[1] > 0.0 {
            s[0] / s[1]
        } else {
            1.0
        }
    }
}

/// `Σ = R S Sᵀ Rᵀ`, symmetrized.
pub fn build_covariance(g: &AnisotropicGaussian) -> Matrix3<f64> {
    let a = g.transform();
    let sigma = a * a.transpose();
    (sigma + sigma.transpose()) * 0.5
}

/// Squared Mahalanobis distance `(x−μ)ᵀ Σ⁻¹ (x−μ)`.
pub fn mahalanobis_sq(x: &Point3, g: &AnisotropicGaussian) -> Result<f64> {
    let s = g.scales.0;
    if s.iter().any(|v| *v <= 0.0) {
        return Err(Error::SingularCovariance);
    }
    let local = g.rotation_matrix().transpose() * (x - g.mean);
    Ok((0..3).map(|i| (local[i] / s[i]).powi(2)).sum())
}

/// `α · exp(−½ (x−μ)ᵀ Σ⁻¹ (x−μ))`.
pub fn gaussian_density(x: &Point3, g: &AnisotropicGaussian, alpha: f64) -> Result<f64> {
    Ok(alpha * (-0.5 * mahalanobis_sq(x, g)?).exp())
}

/// Index of the nearest mean for every ground-truth point.
pub fn nearest_means(gt: &[Point3], gaussians: &[AnisotropicGaussian]) -> Vec<usize> {
    let means: Vec<Point3> = gaussians.iter().map(|g| g.mean).collect();
    let tree = KdTree::build(&means);
    gt.iter().map(|x| tree.nearest(x).0).collect()
}

/// Quadratic form of the alignment loss for one residual `d = x − μ`.
pub(crate) fn alignment_term(d: &Vec3, sigma: &Matrix3<f64>, form: AlignmentForm) -> f64 {
    match form {
        AlignmentForm::Covariance => d.dot(&(sigma * d)),
        AlignmentForm::Mahalanobis => {
            let m = (sigma + Matrix3::identity() * MAHALANOBIS_RIDGE)
                .try_inverse()
                .unwrap_or_else(|| Matrix3::from_element(f64::NAN));
            d.dot(&(m * d))
        }
    }
}

/// Gaussian alignment loss: each ground-truth point picks its nearest mean
/// (Euclidean), and the loss is `(1/N) Σ (x − μ)ᵀ Σ (x − μ)` over the N
/// ground-truth points.
pub fn gaussian_alignment_loss(gt: &PointCloud, gaussians: &[AnisotropicGaussian]) -> Result<f64> {
    gaussian_alignment_loss_with(gt, gaussians, AlignmentForm::Covariance)
}

pub fn gaussian_alignment_loss_with(
    gt: &PointCloud,
    gaussians: &[AnisotropicGaussian],
    form: AlignmentForm,
) -> Result<f64> {
    if gaussians.is_empty() {
        return Err(Error::EmptyInput("gaussians"));
    }
    let assign = nearest_means(gt.points(), gaussians);
    let covs: Vec<Matrix3<f64>> = gaussians.iter().map(build_covariance).collect();
    let total: f64 = gt
        .points()
        .iter()
        .zip(&assign)
        .map(|(x, &j)| alignment_term(&(x - gaussians[j].mean), &covs[j], form))
        .sum();
    Ok(total / gt.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_quat(rng: &mut impl Rng) -> UnitQuaternion {
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if let Ok(u) = UnitQuaternion::from_array(q) {
                return u;
            }
        }
    }

    fn random_gaussian(rng: &mut impl Rng) -> AnisotropicGaussian {
        AnisotropicGaussian::new(
            Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            ScaleTriple([rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)]),
            random_quat(rng),
            0,
        )
    }

    /// Rodrigues' formula for rotation by `angle` about unit `axis`.
    fn rodrigues(axis: Vec3, angle: f64) -> Matrix3<f64> {
        let k = Matrix3::new(0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0);
        Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
    }

    /// Cofactor inverse, independent of nalgebra's LU path.
    fn inverse3(m: &Matrix3<f64>) -> Matrix3<f64> {
        let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
        let cof = Matrix3::new(
            c(1, 2, 1, 2),
            -c(1, 2, 0, 2),
            c(1, 2, 0, 1),
            -c(0, 2, 1, 2),
            c(0, 2, 0, 2),
            -c(0, 2, 0, 1),
            c(0, 1, 1, 2),
            -c(0, 1, 0, 2),
            c(0, 1, 0, 1),
        );
        let det = m[(0, 0)] * cof[(0, 0)] + m[(0, 1)] * cof[(0, 1)] + m[(0, 2)] * cof[(0, 2)];
        cof.transpose() / det
    }

    #[test]
    fn identity_quaternion_is_identity_matrix() {
        assert_eq!(quat_to_rotation([1.0, 0.0, 0.0, 0.0]).unwrap(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_matches_rodrigues() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = quat_to_rotation([h, 0.0, 0.0, h]).unwrap();
        let oracle = rodrigues(Vec3::z(), std::f64::consts::FRAC_PI_2);
        assert!((r - oracle).amax() < 1e-12);
        let image = r * Vec3::x();
        assert!((image - Vec3::y()).amax() < 1e-12);
    }

    #[test]
    fn zero_quaternion_is_degenerate() {
        assert!(matches!(quat_to_rotation([0.0; 4]), Err(Error::DegenerateRotation)));
    }

    #[test]
    fn random_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let r = random_quat(&mut rng).to_rotation_matrix();
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!(close(r.determinant(), 1.0, 1e-12));
        }
    }

    #[test]
    fn sign_canonicalization() {
        let q = UnitQuaternion::new(-0.5, 0.5, -0.5, 0.5).unwrap();
        assert!(q.as_array()[0] > 0.0);
        let q = UnitQuaternion::new(0.0, 0.0, -3.0, 4.0).unwrap();
        assert_eq!(q.as_array(), [0.0, 0.0, 0.6, -0.8]);
        let a = quat_to_rotation([0.3, -0.2, 0.9, 0.1]).unwrap();
        let b = quat_to_rotation([-0.3, 0.2, -0.9, -0.1]).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn matrix_quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let q = random_quat(&mut rng);
            let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix()).unwrap();
            for (a, b) in q.as_array().iter().zip(back.as_array()) {
                assert!(close(*a, b, 1e-12), "{q:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn covariance_examples() {
        let g = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([1.0; 3]), UnitQuaternion::IDENTITY, 0);
        assert_eq!(build_covariance(&g), Matrix3::identity());
        let g = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([1.0, 2.0, 3.0]), UnitQuaternion::IDENTITY, 0);
        assert_eq!(build_covariance(&g), Matrix3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0)));
    }

    #[test]
    fn rotated_covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([1.0, 2.0, 3.0]), random_quat(&mut rng), 0);
            let sigma = build_covariance(&g);
            assert!((sigma - sigma.transpose()).amax() < 1e-12);
            let mut ev: Vec<f64> = SymmetricEigen::new(sigma).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            for (e, want) in ev.iter().zip([1.0, 4.0, 9.0]) {
                assert!(close(*e, want, 1e-9));
            }
        }
    }

    #[test]
    fn density_examples() {
        let unit = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([1.0; 3]), UnitQuaternion::IDENTITY, 0);
        assert_eq!(gaussian_density(&Point3::origin(), &unit, 2.5).unwrap(), 2.5);
        let d = gaussian_density(&Point3::new(0.0, 1.0, 0.0), &unit, 1.0).unwrap();
        assert!(close(d, (-0.5f64).exp(), 1e-15));
        assert!(close(d, 0.60653, 1e-5));
    }

    #[test]
    fn density_and_mahalanobis_match_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let g = random_gaussian(&mut rng);
            let x = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let d = x - g.mean;
            let inv = inverse3(&build_covariance(&g));
            let m_oracle = d.dot(&(inv * d));
            let m = mahalanobis_sq(&x, &g).unwrap();
            assert!(close(m, m_oracle, 1e-10 * m_oracle.max(1.0)), "{m} vs {m_oracle}");
            let dens = gaussian_density(&x, &g, 0.7).unwrap();
            assert!(close(dens, 0.7 * (-0.5 * m_oracle).exp(), 1e-12));
        }
    }

    #[test]
    fn mahalanobis_examples_and_errors() {
        let unit = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([1.0; 3]), UnitQuaternion::IDENTITY, 0);
        assert_eq!(mahalanobis_sq(&Point3::origin(), &unit).unwrap(), 0.0);
        assert_eq!(mahalanobis_sq(&Point3::new(2.0, 0.0, 0.0), &unit).unwrap(), 4.0);
        let flat = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([1.0, 1.0, 0.0]), UnitQuaternion::IDENTITY, 0);
        assert!(matches!(mahalanobis_sq(&Point3::origin(), &flat), Err(Error::SingularCovariance)));
        assert!(matches!(gaussian_density(&Point3::origin(), &flat, 1.0), Err(Error::SingularCovariance)));
    }

    #[test]
    fn mahalanobis_rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let g = random_gaussian(&mut rng);
            let x = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let rot = random_quat(&mut rng);
            let rm = rot.to_rotation_matrix();
            let moved = AnisotropicGaussian::new(
                Point3::from(rm * g.mean.coords),
                g.scales,
                UnitQuaternion::from_rotation_matrix(&(rm * g.rotation_matrix())).unwrap(),
                0,
            );
            let a = mahalanobis_sq(&x, &g).unwrap();
            let b = mahalanobis_sq(&Point3::from(rm * x.coords), &moved).unwrap();
            assert!(close(a, b, 1e-9 * a.max(1.0)));
        }
    }

    #[test]
    fn alignment_loss_examples() {
        let unit = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([1.0; 3]), UnitQuaternion::IDENTITY, 0);
        let gt = PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(gaussian_alignment_loss(&gt, &[unit]).unwrap(), 1.0);

        let mut g2 = unit;
        g2.mean = Point3::new(1.0, 0.0, 0.0);
        let on = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(gaussian_alignment_loss(&on, &[unit, g2]).unwrap(), 0.0);
        assert!(matches!(gaussian_alignment_loss(&gt, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn alignment_loss_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gaussians: Vec<_> = (0..10).map(|_| random_gaussian(&mut rng)).collect();
        let gt: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
            .collect();
        let mut oracle = 0.0;
        for x in &gt {
            let mut best = (f64::INFINITY, 0);
            for (j, g) in gaussians.iter().enumerate() {
                let d = (x - g.mean).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            let g = &gaussians[best.1];
            let d = x - g.mean;
            let a = g.transform();
            oracle += d.dot(&(a * a.transpose() * d));
        }
        oracle /= gt.len() as f64;
        let got = gaussian_alignment_loss(&PointCloud::new(gt).unwrap(), &gaussians).unwrap();
        assert!(close(got, oracle, 1e-10));
    }

    #[test]
    fn mahalanobis_form_uses_inverse() {
        let g = AnisotropicGaussian::new(Point3::origin(), ScaleTriple([2.0, 1.0, 1.0]), UnitQuaternion::IDENTITY, 0);
        let gt = PointCloud::from_xyz(&[[2.0, 0.0, 0.0]]).unwrap();
        let m = gaussian_alignment_loss_with(&gt, &[g], AlignmentForm::Mahalanobis).unwrap();
        assert!(close(m, 1.0, 1e-8));
        let c = gaussian_alignment_loss_with(&gt, &[g], AlignmentForm::Covariance).unwrap();
        assert!(close(c, 16.0, 1e-12));
    }
}
