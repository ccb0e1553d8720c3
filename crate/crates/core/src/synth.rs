//! Seeded synthetic scenes with injected defects and known perturbations.
//!
//! Random streams come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`; Gaussian draws use `rand_distr::StandardNormal`. The same
//! seed gives bit-identical clouds.
//!
//! Scenes are surface samples of boxes, cylinders (lateral surface plus
//! caps) and spheres. Each primitive is sampled in its local frame (centered
//! at the origin, cylinder axis along z) and then mapped through its pose.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::comparison::{auto_threshold, MatchLabel};
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Aabb, Point3, PointCloud, SimilarityTransform, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
}

impl Shape {
    pub fn surface_area(&self) -> f64 {
        match *self {
            Shape::Box { size: [a, b, c] } => 2.0 * (a * b + b * c + a * c),
            Shape::Cylinder { radius, height } => 2.0 * PI * radius * (radius + height),
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims: &[f64] = match self {
            Shape::Box { size } => size,
            Shape::Cylinder { radius, height } => &[*radius, *height],
            Shape::Sphere { radius } => std::slice::from_ref(radius),
        };
        if dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("primitive dimensions must be positive: {self:?}")))
        }
    }

    /// One uniformly distributed surface point in the local frame.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Shape::Box { size: [a, b, c] } => {
                let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut face = 5;
                for (i, area) in faces.iter().enumerate() {
                    if pick < *area {
                        face = i;
                        break;
                    }
                    pick -= area;
                }
                let u = rng.random::<f64>() - 0.5;
                let v = rng.random::<f64>() - 0.5;
                let side = if face % 2 == 0 { 0.5 } else { -0.5 };
                match face / 2 {
                    0 => Point3::new(side * a, u * b, v * c),
                    1 => Point3::new(u * a, side * b, v * c),
                    _ => Point3::new(u * a, v * b, side * c),
                }
            }
            Shape::Cylinder { radius, height } => {
                let lateral = 2.0 * PI * radius * height;
                let cap = PI * radius * radius;
                let pick = rng.random::<f64>() * (lateral + 2.0 * cap);
                let theta = rng.random::<f64>() * 2.0 * PI;
                if pick < lateral {
                    let z = (rng.random::<f64>() - 0.5) * height;
                    Point3::new(radius * theta.cos(), radius * theta.sin(), z)
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let z = if pick < lateral + cap { 0.5 * height } else { -0.5 * height };
                    Point3::new(r * theta.cos(), r * theta.sin(), z)
                }
            }
            Shape::Sphere { radius } => {
                let g = gaussian_direction(rng);
                g * radius
            }
        }
    }
}

fn gaussian_direction(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let g = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = g.norm();
        if n > 1e-12 {
            return g * (1.0 / n);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "SimilarityTransform::identity")]
    pub pose: SimilarityTransform,
    pub points_per_unit_area: f64,
}

impl Primitive {
    pub fn new(shape: Shape, pose: SimilarityTransform, points_per_unit_area: f64) -> Self {
        Primitive {
            shape,
            pose,
            points_per_unit_area,
        }
    }

    /// World-frame surface area (the pose scale enters squared).
    pub fn surface_area(&self) -> f64 {
        self.shape.surface_area() * self.pose.scale().powi(2)
    }

    pub fn point_count(&self) -> usize {
        (self.points_per_unit_area * self.surface_area()).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn surface_area(&self) -> f64 {
        self.primitives.iter().map(Primitive::surface_area).sum()
    }

    /// Rescale every primitive's density so the scene yields about `n` points.
    pub fn with_total_points(mut self, n: usize) -> Self {
        let density = n as f64 / self.surface_area();
        for p in &mut self.primitives {
            p.points_per_unit_area = density;
        }
        self
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    for p in &spec.primitives {
        p.shape.validate()?;
        if !(p.points_per_unit_area > 0.0 && p.points_per_unit_area.is_finite()) {
            return Err(Error::Config("points_per_unit_area must be positive".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    for prim in &spec.primitives {
        for _ in 0..prim.point_count() {
            let local = prim.shape.sample(&mut rng);
            points.push(prim.pose.apply_point(&local));
        }
    }
    if points.is_empty() {
        return Err(Error::Config("scene produced zero points".into()));
    }
    PointCloud::new(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    RemoveRegion,
    MoveRegion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub region: Aabb,
    #[serde(default)]
    pub displacement: [f64; 3],
}

impl DefectSpec {
    pub fn remove(region: Aabb) -> Self {
        DefectSpec {
            kind: DefectKind::RemoveRegion,
            region,
            displacement: [0.0; 3],
        }
    }

    pub fn shift(region: Aabb, displacement: [f64; 3]) -> Self {
        DefectSpec {
            kind: DefectKind::MoveRegion,
            region,
            displacement,
        }
    }
}

/// Defected cloud plus constructive truth in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct DefectOutcome {
    pub cloud: PointCloud,
    /// Per point of the original cloud: removed or moved away → Unmatched.
    pub original_truth: Vec<MatchLabel>,
    /// Per point of the defected cloud: moved → Unmatched.
    pub defected_truth: Vec<MatchLabel>,
    /// For each defected point, its index in the original cloud.
    pub source_index: Vec<usize>,
}

impl DefectOutcome {
    /// Original points that were removed or moved.
    pub fn affected_points(&self, original: &PointCloud) -> Vec<Point3> {
        self.original_truth
            .iter()
            .zip(original.points())
            .filter_map(|(l, p)| l.is_unmatched().then_some(*p))
            .collect()
    }
}

pub fn inject_defect(cloud: &PointCloud, defect: &DefectSpec) -> DefectOutcome {
    apply_defects(cloud, std::slice::from_ref(defect))
}

/// Apply defects in order; each sees the positions left by the previous ones.
pub fn apply_defects(cloud: &PointCloud, defects: &[DefectSpec]) -> DefectOutcome {
    let mut points = Vec::with_capacity(cloud.len());
    let mut source_index = Vec::with_capacity(cloud.len());
    let mut original_truth = vec![MatchLabel::Matched; cloud.len()];
    let mut defected_truth = Vec::with_capacity(cloud.len());

    'points: for (i, &p) in cloud.points().iter().enumerate() {
        let mut pos = p;
        let mut moved = false;
        for d in defects {
            if !d.region.contains(&pos) {
                continue;
            }
            match d.kind {
                DefectKind::RemoveRegion => {
                    original_truth[i] = MatchLabel::Unmatched;
                    continue 'points;
                }
                DefectKind::MoveRegion => {
                    pos = pos + Point3::from(d.displacement);
                    moved = true;
                }
            }
        }
        if moved {
            original_truth[i] = MatchLabel::Unmatched;
        }
        points.push(pos);
        source_index.push(i);
        defected_truth.push(if moved {
            MatchLabel::Unmatched
        } else {
            MatchLabel::Matched
        });
    }
    let colors = cloud
        .colors()
        .map(|c| source_index.iter().map(|&i| c[i]).collect());
    let cloud = PointCloud::with_colors(points, colors).expect("positions stay finite");
    DefectOutcome {
        cloud,
        original_truth,
        defected_truth,
        source_index,
    }
}

/// Bounds for a random similarity perturbation plus coordinate noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    pub rotation_max_deg: f64,
    /// Translation magnitude bound as a fraction of the bbox diagonal.
    pub translation_max_frac: f64,
    pub scale_range: (f64, f64),
    /// Standard deviation of isotropic Gaussian noise, model units.
    pub noise_sigma: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation::none()
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation {
            rotation_max_deg: 0.0,
            translation_max_frac: 0.0,
            scale_range: (1.0, 1.0),
            noise_sigma: 0.0,
        }
    }
}

/// Apply a seeded random similarity within the bounds, then add noise.
/// Returns the transform used (noise excluded).
pub fn perturb(
    cloud: &PointCloud,
    rotation_max_deg: f64,
    translation_max_frac: f64,
    scale_range: (f64, f64),
    noise_sigma: f64,
    seed: u64,
) -> Result<(PointCloud, SimilarityTransform)> {
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::param("scale_range", format!("need 0 < lo <= hi, got ({lo}, {hi})")));
    }
    if !(0.0..=180.0).contains(&rotation_max_deg) {
        return Err(Error::param("rotation_max_deg", "must lie in [0, 180]"));
    }
    if !(translation_max_frac >= 0.0 && translation_max_frac.is_finite()) {
        return Err(Error::param("translation_max_frac", "must be non-negative"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::param("noise_sigma", "must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = gaussian_direction(&mut rng);
    let angle = rng.random::<f64>() * rotation_max_deg.to_radians();
    let scale = lo + rng.random::<f64>() * (hi - lo);
    let direction = gaussian_direction(&mut rng);
    let diag = bounding_box(cloud)?.diagonal();
    let magnitude = rng.random::<f64>() * translation_max_frac * diag;

    let rotation = if angle == 0.0 {
        SimilarityTransform::identity()
    } else {
        SimilarityTransform::from_axis_angle(axis.to_vector(), angle)?
    };
    let transform = SimilarityTransform::new(
        scale,
        *rotation.rotation(),
        (direction * magnitude).to_vector(),
    )?;
    let mut out = transform.apply(cloud);
    if noise_sigma > 0.0 {
        let (points, colors) = out.into_parts();
        let noisy = points
            .into_iter()
            .map(|p| {
                let n = Point3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                p + n * noise_sigma
            })
            .collect();
        out = PointCloud::with_colors(noisy, colors)?;
    }
    Ok((out, transform))
}

pub fn perturb_with(cloud: &PointCloud, p: &Perturbation, seed: u64) -> Result<(PointCloud, SimilarityTransform)> {
    perturb(
        cloud,
        p.rotation_max_deg,
        p.translation_max_frac,
        p.scale_range,
        p.noise_sigma,
        seed,
    )
}

/// A generated reference/field pair with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCase {
    pub reference: PointCloud,
    pub field: PointCloud,
    /// The perturbation applied to the defected cloud to produce `field`.
    pub true_transform: SimilarityTransform,
    pub reference_truth: Vec<MatchLabel>,
    pub field_truth: Vec<MatchLabel>,
    /// Voxel volume of the removed or moved reference points.
    pub defect_volume_truth: f64,
    pub defect_voxel_size: f64,
}

/// Seed for the perturbation stream, distinct from the sampling stream.
pub fn perturbation_seed(scene_seed: u64) -> u64 {
    scene_seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Reference = scene; field = perturb(defects(scene)). Truth volumes use
/// `voxel_size`, or the reference auto threshold when `None`.
pub fn build_case(
    scene: &SceneSpec,
    defects: &[DefectSpec],
    perturbation: &Perturbation,
    voxel_size: Option<f64>,
) -> Result<SynthCase> {
    let reference = generate_scene(scene)?;
    let outcome = apply_defects(&reference, defects);
    if outcome.cloud.is_empty() {
        return Err(Error::Config("defects removed every point".into()));
    }
    let (field, true_transform) =
        perturb_with(&outcome.cloud, perturbation, perturbation_seed(scene.seed))?;
    let voxel = match voxel_size {
        Some(v) => v,
        None => auto_threshold(&reference, &reference)?,
    };
    let affected = outcome.affected_points(&reference);
    let defect_volume_truth = VoxelGrid::from_points(&affected, voxel)?.occupancy_volume();
    Ok(SynthCase {
        reference,
        field,
        true_transform,
        reference_truth: outcome.original_truth,
        field_truth: outcome.defected_truth,
        defect_volume_truth,
        defect_voxel_size: voxel,
    })
}

/// Full description of a synthetic case, as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub defects: Vec<DefectSpec>,
    #[serde(default)]
    pub perturbation: Perturbation,
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            primitives: self.primitives.clone(),
            seed: self.seed,
        }
    }
}

/// Which family of defects a preset should carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectChoice {
    None,
    Remove,
    Move,
}

impl fmt::Display for DefectChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefectChoice::None => "none",
            DefectChoice::Remove => "remove",
            DefectChoice::Move => "move",
        })
    }
}

impl FromStr for DefectChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DefectChoice::None),
            "remove" => Ok(DefectChoice::Remove),
            "move" => Ok(DefectChoice::Move),
            other => Err(Error::Config(format!("unknown defect `{other}` (none, remove, move)"))),
        }
    }
}

/// Bundled test objects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Stacked boxes with a mast and three side arms.
    Tower,
    /// Box body, spherical head, legs, and a tail.
    Shiba,
    /// Seat, back, four legs, and a free-standing armrest.
    Chair,
}

pub const PRESETS: [Preset; 3] = [Preset::Tower, Preset::Shiba, Preset::Chair];

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PRESETS
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!("unknown preset `{s}` (available: tower, shiba, chair)"))
            })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn at(x: f64, y: f64, z: f64) -> SimilarityTransform {
    SimilarityTransform::from_translation(Vector3::new(x, y, z))
}

/// Translation after a rotation of `deg` degrees about `axis`.
fn turned(axis: Vector3<f64>, deg: f64, x: f64, y: f64, z: f64) -> SimilarityTransform {
    at(x, y, z).compose(
        &SimilarityTransform::from_axis_angle(axis, deg.to_radians()).expect("non-zero axis"),
    )
}

fn bx(size: [f64; 3], pose: SimilarityTransform) -> Primitive {
    Primitive::new(Shape::Box { size }, pose, 1.0)
}

fn cyl(radius: f64, height: f64, pose: SimilarityTransform) -> Primitive {
    Primitive::new(Shape::Cylinder { radius, height }, pose, 1.0)
}

fn region(min: [f64; 3], max: [f64; 3]) -> Aabb {
    Aabb::new(min.into(), max.into()).expect("preset regions are ordered")
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Tower => "tower",
            Preset::Shiba => "shiba",
            Preset::Chair => "chair",
        }
    }

    fn primitives(self) -> Vec<Primitive> {
        let x = Vector3::x();
        let y = Vector3::y();
        match self {
            Preset::Tower => vec![
                bx([3.0, 2.0, 1.0], at(0.0, 0.0, 0.5)),
                bx([2.0, 1.4, 4.0], at(0.0, 0.0, 3.0)),
                bx([1.2, 0.9, 2.0], at(0.2, 0.0, 6.0)),
                cyl(0.15, 3.0, at(0.2, 0.0, 8.5)),
                // equipment house, offset toward +x/+y
                bx([1.4, 1.0, 0.6], at(1.9, 1.2, 1.3)),
                // side arms
                cyl(0.1, 2.6, turned(y, 90.0, 2.0, 0.0, 4.2)),
                cyl(0.1, 2.0, turned(x, -90.0, 0.0, 1.4, 2.5)),
                cyl(0.1, 2.0, turned(y, 90.0, -1.1, 0.0, 6.3)),
            ],
            Preset::Shiba => vec![
                bx([2.4, 1.0, 1.0], at(0.0, 0.0, 1.4)),
                Primitive::new(Shape::Sphere { radius: 0.6 }, at(1.6, 0.0, 2.2), 1.0),
                // harness pouch on the right flank
                bx([0.7, 0.3, 0.5], at(0.1, 0.65, 1.45)),
                bx([0.25, 0.25, 0.9], at(0.9, 0.3, 0.45)),
                bx([0.25, 0.25, 0.9], at(0.9, -0.3, 0.45)),
                bx([0.25, 0.25, 0.9], at(-0.9, 0.3, 0.45)),
                bx([0.25, 0.25, 0.9], at(-0.9, -0.3, 0.45)),
                // tail, tilted up and back
                cyl(0.1, 0.9, turned(y, -45.0, -1.45, 0.0, 2.15)),
            ],
            Preset::Chair => vec![
                bx([1.0, 1.0, 0.1], at(0.0, 0.0, 1.0)),
                bx([1.0, 0.1, 1.4], at(0.0, -0.55, 1.75)),
                cyl(0.04, 0.95, at(0.42, 0.42, 0.475)),
                cyl(0.04, 0.95, at(-0.42, 0.42, 0.475)),
                cyl(0.04, 0.95, at(0.42, -0.42, 0.475)),
                cyl(0.04, 0.95, at(-0.42, -0.42, 0.475)),
                // armrest
                bx([0.1, 0.7, 0.08], at(0.62, 0.0, 1.35)),
                // magazine rack hung off the left side
                bx([0.3, 0.6, 0.3], at(-0.75, 0.0, 0.6)),
            ],
        }
    }

    pub fn scene(self, seed: u64, total_points: usize) -> SceneSpec {
        SceneSpec {
            primitives: self.primitives(),
            seed,
        }
        .with_total_points(total_points)
    }

    pub fn defects(self, choice: DefectChoice) -> Vec<DefectSpec> {
        match (self, choice) {
            (_, DefectChoice::None) => Vec::new(),
            (Preset::Tower, DefectChoice::Remove) => vec![
                DefectSpec::remove(region([1.05, -0.3, 3.9], [3.5, 0.3, 4.5])),
                DefectSpec::remove(region([-0.3, 0.75, 2.2], [0.3, 2.6, 2.8])),
                DefectSpec::remove(region([-2.3, -0.3, 6.0], [-0.45, 0.3, 6.6])),
            ],
            (Preset::Tower, DefectChoice::Move) => vec![DefectSpec::shift(
                region([1.05, -0.3, 3.9], [3.5, 0.3, 4.5]),
                [0.0, 0.0, 0.6],
            )],
            (Preset::Shiba, DefectChoice::Remove) => {
                vec![DefectSpec::remove(region([-2.2, -0.3, 1.92], [-1.21, 0.3, 2.8]))]
            }
            (Preset::Shiba, DefectChoice::Move) => vec![DefectSpec::shift(
                region([-2.2, -0.3, 1.92], [-1.21, 0.3, 2.8]),
                [0.0, 0.0, -0.35],
            )],
            (Preset::Chair, DefectChoice::Remove) => {
                vec![DefectSpec::remove(region([0.55, -0.4, 1.3], [0.7, 0.4, 1.4]))]
            }
            (Preset::Chair, DefectChoice::Move) => vec![DefectSpec::shift(
                region([0.55, -0.4, 1.3], [0.7, 0.4, 1.4]),
                [0.0, 0.0, 0.3],
            )],
        }
    }

    pub fn config(self, seed: u64, total_points: usize, choice: DefectChoice, perturbation: Perturbation) -> SceneConfig {
        let scene = self.scene(seed, total_points);
        SceneConfig {
            seed,
            primitives: scene.primitives,
            defects: self.defects(choice),
            perturbation,
        }
    }
}
