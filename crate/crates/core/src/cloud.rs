//! Point and point-cloud types plus unit-sphere patch normalization.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// An ordered, non-empty list of finite 3D points.
///
/// Index identity is meaningful: stage outputs keep point `i` aligned with
/// whatever was derived from input point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud"));
        }
        if let Some(index) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    /// Maximum distance from the centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.points
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn map<F: Fn(&Point3) -> Point3>(&self, f: F) -> Result<Self> {
        Self::new(self.points.iter().map(f).collect())
    }
}

pub(crate) fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / n)
}

/// Maps a cloud into the unit sphere: `(p - centroid) / radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub centroid: [f64; 3],
    pub radius: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            centroid: [0.0; 3],
            radius: 1.0,
        }
    }

    pub fn new(centroid: Point3, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "normalization radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            centroid: [centroid.x, centroid.y, centroid.z],
            radius,
        })
    }

    pub fn centroid(&self) -> Point3 {
        Point3::new(self.centroid[0], self.centroid[1], self.centroid[2])
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from((p - self.centroid()) / self.radius)
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        self.centroid() + p.coords * self.radius
    }
}

/// Centers on the centroid and scales by the max distance to it.
///
/// A cloud whose points all coincide has no extent; it is translated to the
/// origin and left at radius 1.
pub fn normalize_to_unit_sphere(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let c = cloud.centroid();
    let r = cloud.radius();
    let t = NormalizationTransform::new(c, if r > 0.0 { r } else { 1.0 })?;
    let out = cloud.map(|p| t.apply(p))?;
    Ok((out, t))
}

pub fn denormalize(cloud: &PointCloud, t: &NormalizationTransform) -> Result<PointCloud> {
    if !(t.radius > 0.0) {
        return Err(Error::InvalidConfig("normalization radius must be positive".into()));
    }
    cloud.map(|p| t.invert(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-5.0..7.0),
                        rng.random_range(-2.0..3.0),
                        rng.random_range(10.0..11.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyInput(_))));
        let bad = vec![Point3::origin(), Point3::new(0.0, f64::NAN, 0.0)];
        assert!(matches!(PointCloud::new(bad), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn two_point_segment() {
        let cloud = PointCloud::from_xyz(&[[10.0, 0.0, 0.0], [12.0, 0.0, 0.0]]).unwrap();
        let (n, t) = normalize_to_unit_sphere(&cloud).unwrap();
        assert_eq!(n.points()[0], Point3::new(-1.0, 0.0, 0.0));
        assert_eq!(n.points()[1], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(t.centroid, [11.0, 0.0, 0.0]);
        assert_eq!(t.radius, 1.0);
    }

    #[test]
    fn already_normalized_is_identity() {
        let cloud = PointCloud::from_xyz(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]])
            .unwrap();
        let (n, t) = normalize_to_unit_sphere(&cloud).unwrap();
        assert_eq!(n, cloud);
        assert_eq!(t, NormalizationTransform::identity());
    }

    #[test]
    fn denormalize_examples() {
        let t = NormalizationTransform::new(Point3::new(3.0, -1.0, 2.0), 5.0).unwrap();
        let origin = PointCloud::from_xyz(&[[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(denormalize(&origin, &t).unwrap().points()[0], Point3::new(3.0, -1.0, 2.0));
        let t2 = NormalizationTransform::new(Point3::origin(), 2.0).unwrap();
        let x = PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(denormalize(&x, &t2).unwrap().points()[0], Point3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn normalized_cloud_is_centered_on_unit_sphere() {
        let cloud = random_cloud(256, 7);
        let (n, _) = normalize_to_unit_sphere(&cloud).unwrap();
        let c = n.centroid();
        assert!(c.coords.norm() < 1e-9);
        assert!((n.radius() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn round_trip_random_cloud() {
        let cloud = random_cloud(256, 11);
        let (n, t) = normalize_to_unit_sphere(&cloud).unwrap();
        let back = denormalize(&n, &t).unwrap();
        for (a, b) in cloud.points().iter().zip(back.points()) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn translation_and_scale_equivariance() {
        let cloud = random_cloud(128, 3);
        let moved = cloud
            .map(|p| Point3::from(p.coords * 3.7 + Vec3::new(-20.0, 4.0, 1e3)))
            .unwrap();
        let (a, _) = normalize_to_unit_sphere(&cloud).unwrap();
        let (b, _) = normalize_to_unit_sphere(&moved).unwrap();
        for (p, q) in a.points().iter().zip(b.points()) {
            assert!((p - q).amax() < 1e-9);
        }
    }
}
