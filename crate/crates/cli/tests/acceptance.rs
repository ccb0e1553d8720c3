//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the summary is printed
//! even under `cargo test`; the process fails if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cloud_inspect_core::comparison::classify;
use cloud_inspect_core::geometry::{Aabb, VoxelGrid};
use cloud_inspect_core::pipeline::{inspect, AlignOptions, CompareOptions, Sources};
use cloud_inspect_core::ply::{read_ply, write_ply, write_ply_file, CoordinateKind, PlyFormat};
use cloud_inspect_core::synth::{
    build_case, generate_scene, inject_defect, perturb, DefectChoice, DefectSpec, Perturbation,
    Preset,
};
use cloud_inspect_core::{
    compare, estimate_similarity, icp, register, IcpParams, KdTree, MatchLabel, Point3, PointCloud, SimilarityTransform,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const RED: [u8; 3] = [255, 0, 0];
const GREEN: [u8; 3] = [0, 255, 0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_point(r: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal))
}

fn random_rotation(r: &mut ChaCha8Rng, max_angle: f64) -> SimilarityTransform {
    let axis = loop {
        let v = gaussian_point(r);
        if v.norm() > 1e-6 {
            break v.normalize();
        }
    };
    SimilarityTransform::from_axis_angle(axis, r.random_range(0.0..=max_angle)).unwrap()
}

fn mean(points: &[Point3]) -> Point3 {
    points.iter().fold(Point3::default(), |a, p| a + *p) * (1.0 / points.len() as f64)
}

fn brute_nearest(points: &[Point3], q: &Point3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = p.distance_squared(q);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

fn anisotropic(n: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let pts = (0..n)
        .map(|_| {
            let g = gaussian_point(&mut r);
            let e = -r.random::<f64>().max(1e-12).ln();
            Point3::new(3.0 * g.x + 1.5 * e, 1.5 * g.y + 0.8 * e, 0.6 * g.z + 0.3 * e)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn nn_exactness() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0usize;
    let mut queries = 0usize;
    for c in 0..50u64 {
        let mut r = rng(1000 + c);
        let n = r.random_range(1..=2000);
        // Every other cloud lives on an integer lattice so ties are frequent.
        let lattice = c % 2 == 0;
        let draw = |r: &mut ChaCha8Rng| {
            if lattice {
                Point3::new(
                    r.random_range(-6..=6) as f64,
                    r.random_range(-6..=6) as f64,
                    r.random_range(-6..=6) as f64,
                )
            } else {
                Point3::new(r.random::<f64>() * 10.0, r.random::<f64>() * 10.0, r.random::<f64>() * 10.0)
            }
        };
        let pts: Vec<Point3> = (0..n).map(|_| draw(&mut r)).collect();
        let tree = KdTree::from_points(&pts).unwrap();
        for _ in 0..200 {
            let q = draw(&mut r);
            let hit = tree.nearest(&q).unwrap();
            queries += 1;
            if (hit.index, hit.distance) != brute_nearest(&pts, &q) {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatches in {queries} queries, {secs:.2}s (limit 10s)"),
    )
}

fn estimator_recovery() -> Outcome {
    let source = anisotropic(500, 7);
    let diag = source.bounding_box().unwrap().diagonal();
    let (mut worst_rot, mut worst_scale, mut worst_trans) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100u64 {
        let mut r = rng(2000 + seed);
        let rot = random_rotation(&mut r, std::f64::consts::PI);
        let scale = r.random_range(0.5..=2.0);
        let dir = gaussian_point(&mut r).normalize();
        let t = SimilarityTransform::from_translation(dir * diag * r.random::<f64>())
            .compose(&rot)
            .compose(&SimilarityTransform::from_scale(scale).unwrap());
        let target: Vec<Point3> = source.points().iter().map(|p| t.apply_point(p)).collect();
        let est = estimate_similarity(source.points(), &target, true).unwrap();
        worst_rot = worst_rot.max(est.rotation_angle_to(&t));
        worst_scale = worst_scale.max((est.scale() / t.scale() - 1.0).abs());
        worst_trans = worst_trans.max((est.translation() - t.translation()).norm() / diag);
    }
    outcome(
        worst_rot < 1e-9 && worst_scale < 1e-10 && worst_trans < 1e-9,
        format!(
            "worst rotation {worst_rot:.1e} rad, scale {worst_scale:.1e} rel, translation {worst_trans:.1e} × diagonal"
        ),
    )
}

/// The (cloud, perturbed cloud) pairs shared by the convergence criteria.
fn clean_pairs() -> Vec<(PointCloud, PointCloud)> {
    (0..100u64)
        .map(|seed| {
            let preset = [Preset::Tower, Preset::Shiba, Preset::Chair][seed as usize % 3];
            let cloud = generate_scene(&preset.scene(seed, 5000)).unwrap();
            let (moved, _) = perturb(&cloud, 30.0, 0.2, (0.8, 1.25), 0.0, 3000 + seed).unwrap();
            (cloud, moved)
        })
        .collect()
}

fn icp_convergence(pairs: &[(PointCloud, PointCloud)]) -> Outcome {
    let mut ok = 0;
    let mut worst = 0.0f64;
    for (cloud, moved) in pairs {
        let params = IcpParams::for_target(cloud).unwrap();
        let diag = cloud.bounding_box().unwrap().diagonal();
        match register(moved, cloud, &params) {
            Ok(res) => {
                let rel = res.final_rmse / diag;
                worst = worst.max(rel);
                if rel < 1e-6 && res.iterations_run <= 50 {
                    ok += 1;
                }
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    outcome(
        ok >= 95,
        format!("{ok}/100 seeds under 1e-6 × diagonal (need 95), worst {worst:.1e}"),
    )
}

fn icp_monotonicity(pairs: &[(PointCloud, PointCloud)]) -> Outcome {
    let mut violations = 0;
    let mut steps = 0;
    let mut worst = f64::NEG_INFINITY;
    for (cloud, moved) in pairs {
        let params = IcpParams {
            max_correspondence_distance: None,
            ..IcpParams::for_target(cloud).unwrap()
        };
        // The coarse start is often already exact, so the identity start
        // supplies the long iteration histories.
        let runs = [
            register(moved, cloud, &params).unwrap(),
            icp(moved, cloud, &SimilarityTransform::identity(), &params).unwrap(),
        ];
        for res in &runs {
            for w in res.history.windows(2) {
                let rise = w[1].rmse - w[0].rmse;
                steps += 1;
                worst = worst.max(rise);
                if rise > 1e-9 {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0 && steps > 0,
        format!("{violations} increases beyond 1e-9 in {steps} iteration steps, largest change {worst:.1e}"),
    )
}

fn full_perturbation() -> Perturbation {
    Perturbation {
        rotation_max_deg: 180.0,
        translation_max_frac: 0.5,
        scale_range: (0.5, 2.0),
        noise_sigma: 0.0,
    }
}

fn defect_detection() -> Outcome {
    let mut ok = 0;
    let (mut min_p, mut min_r, mut slowest) = (1.0f64, 1.0f64, 0.0f64);
    for seed in 0..20u64 {
        let start = Instant::now();
        let case = build_case(
            &Preset::Tower.scene(seed, 50_000),
            &Preset::Tower.defects(DefectChoice::Remove),
            &full_perturbation(),
            None,
        )
        .unwrap();
        let out = match inspect(
            &Sources::default(),
            &case.reference,
            &case.field,
            &AlignOptions::default(),
            &CompareOptions::default(),
            false,
        ) {
            Ok(o) => o,
            Err(_) => continue,
        };
        let secs = start.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        let res = &out.compare.result;
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        let pairs = res
            .labels_b_vs_a
            .iter()
            .zip(&case.reference_truth)
            .chain(res.labels_a_vs_b.iter().zip(&case.field_truth));
        for (got, truth) in pairs {
            match (got.is_unmatched(), truth.is_unmatched()) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let precision = tp as f64 / (tp + fp).max(1) as f64;
        let recall = tp as f64 / (tp + fneg).max(1) as f64;
        min_p = min_p.min(precision);
        min_r = min_r.min(recall);
        if precision >= 0.95 && recall >= 0.95 && secs < 60.0 {
            ok += 1;
        }
    }
    outcome(
        ok >= 18,
        format!("{ok}/20 seeds (need 18), min precision {min_p:.3}, min recall {min_r:.3}, slowest case {slowest:.1}s"),
    )
}

fn moved_part() -> Outcome {
    let mut ok = 0;
    let mut worst = 0.0f64;
    let defect = Preset::Chair.defects(DefectChoice::Move).remove(0);
    let shift = Point3::from(defect.displacement);
    for seed in 0..10u64 {
        let case = build_case(&Preset::Chair.scene(seed, 30_000), std::slice::from_ref(&defect), &full_perturbation(), None).unwrap();
        let Ok(out) = inspect(
            &Sources::default(),
            &case.reference,
            &case.field,
            &AlignOptions::default(),
            &CompareOptions::default(),
            false,
        ) else {
            continue;
        };
        let vacated: Vec<Point3> = case.reference.points().iter().copied().filter(|p| defect.region.contains(p)).collect();
        let old_centroid = mean(&vacated);
        let new_centroid = old_centroid + shift;
        let diff = &out.compare.diff;
        let colored = |want: [u8; 3]| -> Vec<Point3> {
            diff.points()
                .iter()
                .zip(diff.colors().unwrap())
                .filter(|(_, c)| **c == want)
                .map(|(p, _)| *p)
                .collect()
        };
        let (red, green) = (colored(RED), colored(GREEN));
        if red.is_empty() || green.is_empty() {
            continue;
        }
        let threshold = out.compare.result.threshold;
        let red_err = mean(&red).distance(&new_centroid) / threshold;
        let green_err = mean(&green).distance(&old_centroid) / threshold;
        worst = worst.max(red_err).max(green_err);
        if red_err <= 2.0 && green_err <= 2.0 {
            ok += 1;
        }
    }
    outcome(
        ok == 10,
        format!("{ok}/10 seeds with both centroids within 2 × threshold, worst offset {worst:.2} × threshold"),
    )
}

/// Uniform samples filling an axis-aligned box.
fn solid_box(n: usize, extent: f64, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let pts = (0..n)
        .map(|_| Point3::new(r.random::<f64>() * extent, r.random::<f64>() * extent, r.random::<f64>() * extent))
        .collect();
    PointCloud::new(pts).unwrap()
}

fn volume_estimate() -> Outcome {
    let mut ok = 0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    // A cube cut from one corner of a solid-sampled block.
    let cube = Aabb::new(Point3::new(1.2, 1.2, 1.2), Point3::new(2.0, 2.0, 2.0)).unwrap();
    for seed in 0..10u64 {
        let reference = solid_box(40_000, 2.0, 5000 + seed);
        let cut = inject_defect(&reference, &DefectSpec::remove(cube));
        let threshold = cloud_inspect_core::auto_threshold(&cut.cloud, &reference).unwrap();
        let res = compare(&cut.cloud, &reference, threshold, threshold).unwrap();
        let deleted = cut.affected_points(&reference);
        let oracle = VoxelGrid::from_points(&deleted, threshold).unwrap().occupancy_volume();
        let ratio = res.unmatched_volume_b / oracle;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        if (0.5..=2.0).contains(&ratio) {
            ok += 1;
        }
    }
    outcome(
        ok == 10,
        format!("{ok}/10 seeds within [0.5, 2] of the voxelized deletion, ratios {lo:.3}..{hi:.3}"),
    )
}

fn ply_round_trip() -> Outcome {
    let mut failures = 0;
    for seed in 0..20u64 {
        let mut r = rng(6000 + seed);
        let n = r.random_range(1..=5000);
        let pts: Vec<Point3> = (0..n)
            .map(|_| {
                let g = gaussian_point(&mut r) * 10f64.powi(r.random_range(-6..=6));
                Point3::new(g.x, g.y, g.z)
            })
            .collect();
        let colors: Vec<[u8; 3]> = (0..n).map(|_| [r.random(), r.random(), r.random()]).collect();
        let cloud = PointCloud::with_colors(pts, Some(colors)).unwrap();
        let bits = |c: &PointCloud| -> Vec<[u64; 3]> { c.points().iter().map(|p| p.to_array().map(f64::to_bits)).collect() };
        let binary = read_ply(&write_ply(&cloud, PlyFormat::BinaryLittleEndian, CoordinateKind::F64)).unwrap();
        let ascii = read_ply(&write_ply(&cloud, PlyFormat::Ascii, CoordinateKind::F64)).unwrap();
        let ascii32 = read_ply(&write_ply(&cloud, PlyFormat::Ascii, CoordinateKind::F32)).unwrap();
        let binary32 = read_ply(&write_ply(&cloud, PlyFormat::BinaryLittleEndian, CoordinateKind::F32)).unwrap();
        let lossless = bits(&binary) == bits(&cloud) && binary.colors() == cloud.colors();
        let same_in_memory = ascii == binary && ascii32 == binary32;
        if !(lossless && same_in_memory) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{failures}/20 clouds failed bit-exact f64 round trip or ascii/binary agreement"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let d = dir.path();
    let case = build_case(
        &Preset::Tower.scene(11, 30_000),
        &Preset::Tower.defects(DefectChoice::Remove),
        &full_perturbation(),
        None,
    )
    .unwrap();
    let (rp, fp) = (d.join("reference.ply"), d.join("field.ply"));
    write_ply_file(&rp, &case.reference, PlyFormat::BinaryLittleEndian, CoordinateKind::F64).unwrap();
    write_ply_file(&fp, &case.field, PlyFormat::BinaryLittleEndian, CoordinateKind::F64).unwrap();

    let mut runs = Vec::new();
    for (k, threads) in ["1", "1", "8", "8"].iter().enumerate() {
        let report = d.join(format!("report{k}.json"));
        let diff = d.join(format!("diff{k}.ply"));
        let status = Command::new(env!("CARGO_BIN_EXE_cloud-inspect"))
            .args(["--threads", threads, "--quiet", "inspect"])
            .args([&rp, &fp])
            .arg("--report")
            .arg(&report)
            .arg("--out")
            .arg(&diff)
            .status()
            .expect("binary runs");
        let read = |p: &Path| fs::read(p).unwrap_or_default();
        runs.push((status.code(), read(&report), read(&diff)));
    }
    let codes: Vec<Option<i32>> = runs.iter().map(|r| r.0).collect();
    let same = runs.iter().all(|r| r.1 == runs[0].1 && r.2 == runs[0].2);
    let nonempty = !runs[0].1.is_empty() && !runs[0].2.is_empty();
    outcome(
        same && nonempty && codes.iter().all(|c| *c == Some(4)),
        format!("4 inspect runs (threads 1,1,8,8): exit codes {codes:?}, reports and diffs byte-identical: {same}"),
    )
}

fn threshold_monotonicity() -> Outcome {
    let case = build_case(
        &Preset::Shiba.scene(13, 20_000),
        &Preset::Shiba.defects(DefectChoice::Move),
        &full_perturbation(),
        None,
    )
    .unwrap();
    let out = inspect(
        &Sources::default(),
        &case.reference,
        &case.field,
        &AlignOptions::default(),
        &CompareOptions::default(),
        false,
    )
    .unwrap();
    let aligned = &out.align.aligned;
    let base = out.compare.result.threshold;
    let thresholds: Vec<f64> = (0..25).map(|i| base * 0.05 * 1.25f64.powi(i)).collect();
    let mut violations = 0;
    let mut checked = 0;
    for (a, b) in [(aligned, &case.reference), (&case.reference, aligned)] {
        let sets: Vec<Vec<MatchLabel>> = thresholds.iter().map(|&t| classify(a, b, t).unwrap().labels).collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                checked += 1;
                let subset = sets[j].iter().zip(&sets[i]).all(|(hi, lo)| !hi.is_unmatched() || lo.is_unmatched());
                if !subset {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {checked} threshold pairs in both directions"),
    )
}

fn main() {
    let started = Instant::now();
    let pairs = clean_pairs();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("NN exactness", Box::new(nn_exactness)),
        ("estimator recovery", Box::new(estimator_recovery)),
        ("ICP convergence (clean)", Box::new(|| icp_convergence(&pairs))),
        ("ICP monotonicity", Box::new(|| icp_monotonicity(&pairs))),
        ("defect detection (tower)", Box::new(defect_detection)),
        ("moved-part semantics (chair)", Box::new(moved_part)),
        ("volume estimate", Box::new(volume_estimate)),
        ("PLY round trip", Box::new(ply_round_trip)),
        ("determinism", Box::new(determinism)),
        ("threshold monotonicity", Box::new(threshold_monotonicity)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {}  {} [{:.1}s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
