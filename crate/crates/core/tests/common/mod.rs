#![allow(dead_code)]

use cloud_inspect_core::{Point3, PointCloud, SimilarityTransform};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn coord() -> impl Strategy<Value = f64> {
    -100.0..100.0f64
}

pub fn point() -> impl Strategy<Value = Point3> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

pub fn points(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), 1..max)
}

/// Points on a small integer lattice, so exact ties are common.
pub fn lattice_points(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(
        (-4i32..5, -4i32..5, -4i32..5).prop_map(|(x, y, z)| Point3::new(x as f64, y as f64, z as f64)),
        1..max,
    )
}

pub fn unit_axis() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("axis away from zero", |(x, y, z)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

pub fn transform() -> impl Strategy<Value = SimilarityTransform> {
    (unit_axis(), -3.14..3.14f64, 0.2..5.0f64, (coord(), coord(), coord())).prop_map(
        |(axis, angle, scale, (tx, ty, tz))| {
            let r = SimilarityTransform::from_axis_angle(axis, angle).unwrap();
            let s = SimilarityTransform::from_scale(scale).unwrap();
            SimilarityTransform::from_translation(Vector3::new(tx, ty, tz)).compose(&r.compose(&s))
        },
    )
}

pub fn rigid() -> impl Strategy<Value = SimilarityTransform> {
    (unit_axis(), -3.14..3.14f64, (coord(), coord(), coord())).prop_map(|(axis, angle, (tx, ty, tz))| {
        let r = SimilarityTransform::from_axis_angle(axis, angle).unwrap();
        SimilarityTransform::from_translation(Vector3::new(tx, ty, tz)).compose(&r)
    })
}

/// Gaussian cloud with distinct axis spreads and a skewed tail on each axis.
pub fn anisotropic_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let g: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let e: f64 = -rng.random::<f64>().max(1e-12).ln();
            Point3::new(3.0 * g[0] + 1.5 * e, 1.5 * g[1] + 0.8 * e, 0.6 * g[2] + 0.3 * e)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

/// Linear-scan nearest neighbor, smallest index on ties.
pub fn brute_nearest(points: &[Point3], q: &Point3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = p.distance_squared(q);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

pub fn brute_nearest_distinct(points: &[Point3], q: &Point3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = p.distance_squared(q);
        if d2 > 0.0 && best.map_or(true, |(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}

pub fn close(a: &Point3, b: &Point3, tol: f64) -> bool {
    a.distance(b) <= tol
}
