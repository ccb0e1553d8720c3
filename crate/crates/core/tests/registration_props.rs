mod common;

use cloud_inspect_core::registration::{estimate_similarity, find_correspondences};
use cloud_inspect_core::{icp, register, IcpParams, KdTree, Point3, PointCloud, SimilarityTransform};
use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sum_sq(t: &SimilarityTransform, from: &[Point3], to: &[Point3]) -> f64 {
    from.iter().zip(to).map(|(p, q)| t.apply_point(p).distance_squared(q)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimator_ignores_pair_order(pts in prop::collection::vec(point(), 4..60), t in transform(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<Point3> = pts
            .iter()
            .map(|p| t.apply_point(p) + Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let Ok(a) = estimate_similarity(&pts, &target, true) else { return Ok(()); };
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.shuffle(&mut rng);
        let ps: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
        let ts: Vec<Point3> = perm.iter().map(|&i| target[i]).collect();
        let b = estimate_similarity(&ps, &ts, true).unwrap();
        for p in &pts {
            let (x, y) = (a.apply_point(p), b.apply_point(p));
            prop_assert!(close(&x, &y, 1e-12 * (1.0 + x.norm()) * 1e3), "{x:?} vs {y:?}");
        }
    }

    #[test]
    fn estimator_is_a_local_minimum(pts in prop::collection::vec(point(), 5..40), t in transform(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<Point3> = pts
            .iter()
            .map(|p| t.apply_point(p) + Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 5.0)
            .collect();
        let Ok(best) = estimate_similarity(&pts, &target, true) else { return Ok(()); };
        let base = sum_sq(&best, &pts, &target);
        for _ in 0..100 {
            let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let nudge = SimilarityTransform::from_translation(Vector3::new(
                rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 2e-3)
                .compose(&SimilarityTransform::from_axis_angle(axis, 1e-3).unwrap())
                .compose(&SimilarityTransform::from_scale(1.0 + 1e-3 * (rng.random::<f64>() - 0.5)).unwrap());
            let probe = nudge.compose(&best);
            prop_assert!(sum_sq(&probe, &pts, &target) >= base * (1.0 - 1e-12));
        }
    }

    #[test]
    fn rigid_estimate_has_unit_scale(pts in prop::collection::vec(point(), 4..40), t in transform()) {
        let target: Vec<Point3> = pts.iter().map(|p| t.apply_point(p)).collect();
        if let Ok(r) = estimate_similarity(&pts, &target, false) {
            prop_assert_eq!(r.scale(), 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn unbounded_icp_rmse_never_increases(seed in any::<u64>(), angle in 0.0..0.5f64, scale in 0.8..1.25f64, axis in unit_axis()) {
        let source = anisotropic_cloud(1500, seed);
        let t = SimilarityTransform::from_axis_angle(axis, angle).unwrap()
            .compose(&SimilarityTransform::from_scale(scale).unwrap());
        let target = t.apply(&anisotropic_cloud(1500, seed ^ 1));
        let params = IcpParams { max_correspondence_distance: None, ..IcpParams::default() };
        let out = icp(&source, &target, &SimilarityTransform::identity(), &params).unwrap();
        for w in out.history.windows(2) {
            prop_assert!(w[1].rmse <= w[0].rmse + 1e-9, "{} -> {}", w[0].rmse, w[1].rmse);
        }
    }

    #[test]
    fn registration_commutes_with_rigid_motion(seed in any::<u64>(), t in transform(), g in rigid()) {
        let source = anisotropic_cloud(800, seed);
        let target = t.apply(&source);
        let params = IcpParams::for_target(&target).unwrap();
        let plain = register(&source, &target, &params).unwrap();
        let moved = register(&g.apply(&source), &g.apply(&target), &params).unwrap();
        let conjugated = g.compose(&plain.transform).compose(&g.inverse());
        let diag = target.bounding_box().unwrap().diagonal() * (1.0 + g.translation().norm());
        for p in g.apply(&source).points() {
            prop_assert!(close(&moved.transform.apply_point(p), &conjugated.apply_point(p), 1e-6 * diag));
        }
    }

    #[test]
    fn register_is_deterministic(seed in any::<u64>(), t in transform()) {
        let source = anisotropic_cloud(600, seed);
        let target = t.apply(&anisotropic_cloud(600, seed.wrapping_add(1)));
        let params = IcpParams::for_target(&target).unwrap();
        let a = register(&source, &target, &params);
        let b = register(&source, &target, &params);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "runs disagree"),
        }
    }

    #[test]
    fn no_scaling_returns_unit_scale(seed in any::<u64>(), t in rigid()) {
        let source = anisotropic_cloud(600, seed);
        let target = t.apply(&source);
        let params = IcpParams { with_scaling: false, ..IcpParams::for_target(&target).unwrap() };
        let out = register(&source, &target, &params).unwrap();
        prop_assert_eq!(out.transform.scale(), 1.0);
    }
}

#[test]
fn correspondences_are_in_source_order() {
    let target = anisotropic_cloud(500, 1);
    let source = anisotropic_cloud(300, 2);
    let tree = KdTree::build(&target).unwrap();
    let set = find_correspondences(&tree, source.points(), Some(1.0)).unwrap();
    assert!(set.pairs.windows(2).all(|w| w[0].source < w[1].source));
    for c in &set.pairs {
        let (i, d) = brute_nearest(target.points(), &source.points()[c.source]);
        assert_eq!((c.target, c.distance), (i, d));
    }
}

#[test]
fn anisotropic_fixture_has_distinct_spreads() {
    let c: PointCloud = anisotropic_cloud(2000, 3);
    let bb = c.bounding_box().unwrap().extent();
    assert!(bb.x > bb.y && bb.y > bb.z);
}
