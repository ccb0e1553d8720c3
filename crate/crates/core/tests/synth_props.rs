use cloud_inspect_core::geometry::Aabb;
use cloud_inspect_core::synth::{
    generate_scene, inject_defect, perturb, DefectSpec, Preset, Primitive, SceneSpec, Shape,
};
use cloud_inspect_core::{MatchLabel, Point3, SimilarityTransform};
use nalgebra::Vector3;
use proptest::prelude::*;

fn region() -> impl Strategy<Value = Aabb> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.1..1.5f64).prop_map(|(x, y, z, w)| {
        Aabb::new(Point3::new(x, y, z), Point3::new(x + w, y + w, z + 2.0 * w)).unwrap()
    })
}

fn scene(seed: u64) -> SceneSpec {
    SceneSpec {
        primitives: vec![
            Primitive::new(Shape::Box { size: [2.0, 1.0, 3.0] }, SimilarityTransform::identity(), 60.0),
            Primitive::new(
                Shape::Sphere { radius: 0.7 },
                SimilarityTransform::from_translation(Vector3::new(0.5, 0.5, 1.0)),
                60.0,
            ),
        ],
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(generate_scene(&scene(seed)).unwrap(), generate_scene(&scene(seed)).unwrap());
    }

    #[test]
    fn removal_partitions_the_cloud(seed in any::<u64>(), r in region()) {
        let cloud = generate_scene(&scene(seed)).unwrap();
        let out = inject_defect(&cloud, &DefectSpec::remove(r));
        let removed: Vec<usize> = (0..cloud.len()).filter(|&i| out.original_truth[i] == MatchLabel::Unmatched).collect();
        prop_assert_eq!(removed.len() + out.cloud.len(), cloud.len());
        for &i in &removed {
            prop_assert!(r.contains(&cloud.points()[i]));
            prop_assert!(!out.source_index.contains(&i));
        }
        for (k, &i) in out.source_index.iter().enumerate() {
            prop_assert_eq!(out.cloud.points()[k], cloud.points()[i]);
            prop_assert!(!r.contains(&cloud.points()[i]));
        }
    }

    #[test]
    fn sphere_points_lie_on_the_surface(seed in any::<u64>(), radius in 0.1..10.0f64) {
        let spec = SceneSpec {
            primitives: vec![Primitive::new(
                Shape::Sphere { radius },
                SimilarityTransform::from_translation(Vector3::new(1.0, -2.0, 3.0)),
                300.0 / (4.0 * std::f64::consts::PI * radius * radius),
            )],
            seed,
        };
        let c = Point3::new(1.0, -2.0, 3.0);
        for p in generate_scene(&spec).unwrap().points() {
            prop_assert!((p.distance(&c) - radius).abs() < 1e-9 * radius.max(1.0));
        }
    }

    #[test]
    fn zero_perturbation_is_identity(seed in any::<u64>()) {
        let cloud = generate_scene(&Preset::Chair.scene(seed, 500)).unwrap();
        let (out, t) = perturb(&cloud, 0.0, 0.0, (1.0, 1.0), 0.0, seed).unwrap();
        prop_assert_eq!(out, cloud);
        prop_assert_eq!(t, SimilarityTransform::identity());
    }

    #[test]
    fn noiseless_perturbation_is_the_returned_transform(seed in any::<u64>()) {
        let cloud = generate_scene(&Preset::Shiba.scene(seed, 500)).unwrap();
        let (out, t) = perturb(&cloud, 180.0, 0.5, (0.5, 2.0), 0.0, seed).unwrap();
        prop_assert_eq!(out, t.apply(&cloud));
    }
}
