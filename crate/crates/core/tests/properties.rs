use nalgebra::{Matrix3, Rotation3};
use proptest::prelude::*;
use splatup::gaussian::build_covariance;
use splatup::neighbors::{fps_points, KdTree};
use splatup::sampling::{sample_gaussians, whiten};
use splatup::*;

fn point() -> impl Strategy<Value = Point3> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn cloud(min: usize, max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(), min..max).prop_map(|v| PointCloud::new(v).unwrap())
}

fn quaternion() -> impl Strategy<Value = UnitQuaternion> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| UnitQuaternion::new(w, x, y, z).unwrap())
}

fn gaussian() -> impl Strategy<Value = AnisotropicGaussian> {
    (point(), prop::array::uniform3(0.01..3.0f64), quaternion())
        .prop_map(|(m, s, q)| AnisotropicGaussian::new(m, ScaleTriple::new(s).unwrap(), q, 0))
}

fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    (-3.0..3.0f64, -1.5..1.5f64, -3.0..3.0f64).prop_map(|(a, b, c)| Rotation3::from_euler_angles(a, b, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_symmetric_psd_with_squared_scale_spectrum(g in gaussian()) {
        let sigma = build_covariance(&g);
        prop_assert!((sigma - sigma.transpose()).amax() < 1e-12);
        let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = g.scales.0.iter().map(|s| s * s).collect();
        want.sort_by(f64::total_cmp);
        prop_assert!(eig[0] > -1e-12);
        for (a, b) in eig.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn rotation_matrices_are_proper(q in quaternion()) {
        let r = q.to_rotation_matrix();
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        let back = UnitQuaternion::from_rotation_matrix(&r).unwrap();
        let (a, b) = (q.as_array(), back.as_array());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9), "{a:?} vs {b:?}");
    }

    #[test]
    fn samples_whiten_inside_truncation_ball(g in gaussian(), seed in any::<u64>(), radius in 0.5..3.0f64) {
        let out = sample_gaussians(&[g], 32, radius, seed);
        prop_assert_eq!(out.len(), 32);
        for p in &out.points {
            prop_assert!(whiten(p, &g).norm() <= radius + 1e-9);
        }
        prop_assert_eq!(out, sample_gaussians(&[g], 32, radius, seed));
    }

    #[test]
    fn normalization_round_trips(c in cloud(1, 60)) {
        let (unit, t) = normalize_to_unit_sphere(&c).unwrap();
        prop_assert!(unit.centroid().coords.norm() < 1e-9);
        prop_assert!(unit.radius() <= 1.0 + 1e-12);
        let back = denormalize(&unit, &t).unwrap();
        let scale = c.radius().max(1.0);
        for (a, b) in c.points().iter().zip(back.points()) {
            prop_assert!((a - b).amax() < 1e-12 * scale);
        }
    }

    #[test]
    fn metrics_are_symmetric_and_rigid_invariant(p in cloud(1, 40), q in cloud(1, 40), rot in rotation(), shift in point()) {
        let cd = chamfer(&p, &q).unwrap();
        let hd = hausdorff(&p, &q).unwrap();
        prop_assert!((cd - chamfer(&q, &p).unwrap()).abs() <= 1e-12 * cd.max(1.0));
        prop_assert!((hd - hausdorff(&q, &p).unwrap()).abs() <= 1e-12 * hd.max(1.0));
        prop_assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        let move_ = |c: &PointCloud| c.map(|x| rot * x + shift.coords).unwrap();
        let cd2 = chamfer(&move_(&p), &move_(&q)).unwrap();
        let hd2 = hausdorff(&move_(&p), &move_(&q)).unwrap();
        prop_assert!((cd - cd2).abs() <= 1e-9 * cd.max(1.0));
        prop_assert!((hd - hd2).abs() <= 1e-9 * hd.max(1.0));
    }

    #[test]
    fn fps_is_a_prefix_chain_of_distinct_indices(c in cloud(2, 120), frac in 0.1..1.0f64) {
        let n = c.len();
        let m = ((n as f64 * frac) as usize).max(1);
        let full = fps_points(c.points(), n, 0).unwrap();
        let part = fps_points(c.points(), m, 0).unwrap();
        prop_assert_eq!(&full[..m], &part[..]);
        let mut sorted = full.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n);
    }

    #[test]
    fn knn_matches_brute_force(c in cloud(1, 200), q in point(), k in 1usize..20) {
        let k = k.min(c.len());
        let tree = KdTree::build(c.points());
        let got: Vec<usize> = tree.knn(&q, k).unwrap().into_iter().map(|(i, _)| i).collect();
        let mut all: Vec<(f64, usize)> = c.points().iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<usize> = all[..k].iter().map(|&(_, i)| i).collect();
        prop_assert_eq!(got, want);
    }
}
