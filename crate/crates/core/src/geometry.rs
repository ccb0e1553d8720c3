//! Points, clouds, similarity transforms, bounding boxes and voxel grids.
//!
//! Every type here is an immutable value; operations return new values.
//! Reductions (centroids, voxel means) use pairwise summation in index
//! order so results are bit-stable regardless of thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit RGB triple.
pub type Rgb = [u8; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    /// Squared Euclidean distance, accumulated x, y, z in that order.
    #[inline]
    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.distance(&Point3::ORIGIN)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<Vector3<f64>> for Point3 {
    fn from(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Pairwise (cascade) sum of a sequence of 3-vectors, in index order.
pub(crate) fn pairwise_sum<T, F>(items: &[T], f: &F) -> [f64; 3]
where
    F: Fn(&T) -> [f64; 3],
{
    const BLOCK: usize = 16;
    if items.len() <= BLOCK {
        let mut acc = [0.0; 3];
        for it in items {
            let v = f(it);
            acc[0] += v[0];
            acc[1] += v[1];
            acc[2] += v[2];
        }
        return acc;
    }
    let (left, right) = items.split_at(items.len() / 2);
    let a = pairwise_sum(left, f);
    let b = pairwise_sum(right, f);
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Pairwise sum of scalars, in index order.
pub(crate) fn pairwise_sum_scalar<T, F>(items: &[T], f: &F) -> f64
where
    F: Fn(&T) -> f64,
{
    const BLOCK: usize = 16;
    if items.len() <= BLOCK {
        return items.iter().map(f).fold(0.0, |a, b| a + b);
    }
    let (left, right) = items.split_at(items.len() / 2);
    pairwise_sum_scalar(left, f) + pairwise_sum_scalar(right, f)
}

/// Arithmetic mean of a point slice.
pub fn mean_point(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let s = pairwise_sum(points, &|p: &Point3| p.to_array());
    let n = points.len() as f64;
    Ok(Point3::new(s[0] / n, s[1] / n, s[2] / n))
}

/// Ordered points with optional per-point colors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    colors: Option<Vec<Rgb>>,
}

impl PointCloud {
    /// Build a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::with_colors(points, None)
    }

    pub fn with_colors(points: Vec<Point3>, colors: Option<Vec<Rgb>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidCloud(format!("non-finite coordinate at point {i}")));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} colors for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud { points, colors })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    /// Same points, every point painted `color`.
    pub fn painted(&self, color: Rgb) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            colors: Some(vec![color; self.points.len()]),
        }
    }

    pub fn without_colors(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            colors: None,
        }
    }

    /// Sub-cloud of the given indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<Rgb>>) {
        (self.points, self.colors)
    }

    pub fn centroid(&self) -> Result<Point3> {
        centroid(self)
    }

    pub fn bounding_box(&self) -> Result<Aabb> {
        bounding_box(self)
    }
}

/// Uniform scale, proper rotation and translation: `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validating constructor: `scale > 0`, `R` orthonormal with `det R = +1`.
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidTransform(format!("scale must be positive, got {scale}")));
        }
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho >= ROTATION_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation not orthonormal (max |RᵀR − I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() >= ROTATION_TOL {
            return Err(Error::InvalidTransform(format!("rotation determinant {det}")));
        }
        Ok(SimilarityTransform {
            scale,
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(
        scale: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Self {
        SimilarityTransform {
            scale,
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        SimilarityTransform {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_scale(scale: f64) -> Result<Self> {
        Self::new(scale, Matrix3::identity(), Vector3::zeros())
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite() && angle.is_finite()) {
            return Err(Error::InvalidTransform("rotation axis must be non-zero".into()));
        }
        let u = nalgebra::Unit::new_unchecked(axis / n);
        let r = nalgebra::Rotation3::from_axis_angle(&u, angle);
        Ok(SimilarityTransform {
            rotation: *r.matrix(),
            ..Self::identity()
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Rotation as nested rows.
    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ]
    }

    #[inline]
    pub fn apply_point(&self, p: &Point3) -> Point3 {
        let v = self.rotation * p.to_vector() * self.scale + self.translation;
        Point3::from(v)
    }

    /// Transform every point; colors and order are carried through.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.apply_point(p)).collect(),
            colors: cloud.colors.clone(),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        SimilarityTransform {
            scale: inv_s,
            rotation: rt,
            translation: -(rt * self.translation) * inv_s,
        }
    }

    /// Angle in radians of the relative rotation `R_other · R_selfᵀ`.
    pub fn rotation_angle_to(&self, other: &SimilarityTransform) -> f64 {
        rotation_angle(&(other.rotation * self.rotation.transpose()))
    }

    /// Largest displacement between `self` and `other` over the given probe points.
    pub fn max_displacement(&self, other: &SimilarityTransform, probes: &[Point3]) -> f64 {
        probes
            .iter()
            .map(|p| self.apply_point(p).distance(&other.apply_point(p)))
            .fold(0.0, f64::max)
    }
}

/// On-disk form of a transform. Rotation is written as row-major rows; on
/// input an `axis` + `angle_deg` pair may be given instead.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    #[serde(default = "unit_scale")]
    scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle_deg: Option<f64>,
    #[serde(default)]
    translation: [f64; 3],
}

fn unit_scale() -> f64 {
    1.0
}

impl From<SimilarityTransform> for TransformRepr {
    fn from(t: SimilarityTransform) -> Self {
        TransformRepr {
            scale: t.scale,
            rotation: Some(t.rotation_rows()),
            axis: None,
            angle_deg: None,
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for SimilarityTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        let rotation = match (r.rotation, r.axis, r.angle_deg) {
            (Some(rows), None, None) => Matrix3::from_row_slice(rows.as_flattened()),
            (None, Some(axis), Some(deg)) => {
                *SimilarityTransform::from_axis_angle(Vector3::from(axis), deg.to_radians())?
                    .rotation()
            }
            (None, None, None) => Matrix3::identity(),
            _ => {
                return Err(Error::InvalidTransform(
                    "give either `rotation` or both `axis` and `angle_deg`".into(),
                ))
            }
        };
        SimilarityTransform::new(r.scale, rotation, Vector3::from(r.translation))
    }
}

impl Serialize for SimilarityTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformRepr::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SimilarityTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(d)?;
        SimilarityTransform::try_from(repr).map_err(serde::de::Error::custom)
    }
}

/// Rotation angle of a rotation matrix, accurate near zero (uses the
/// skew part for the sine instead of `acos` of the trace).
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = 0.5 * skew.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::param("aabb", "non-finite corner"));
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::param("aabb", "min exceeds max"));
        }
        Ok(Aabb { min, max })
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn diagonal(&self) -> f64 {
        self.max.distance(&self.min)
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn corners(&self) -> [Point3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Point3::new(a.x, a.y, a.z),
            Point3::new(b.x, a.y, a.z),
            Point3::new(a.x, b.y, a.z),
            Point3::new(b.x, b.y, a.z),
            Point3::new(a.x, a.y, b.z),
            Point3::new(b.x, a.y, b.z),
            Point3::new(a.x, b.y, b.z),
            Point3::new(b.x, b.y, b.z),
        ]
    }
}

pub fn centroid(cloud: &PointCloud) -> Result<Point3> {
    mean_point(cloud.points())
}

pub fn bounding_box(cloud: &PointCloud) -> Result<Aabb> {
    bounding_box_of(cloud.points())
}

pub fn bounding_box_of(points: &[Point3]) -> Result<Aabb> {
    let first = *points.first().ok_or(Error::EmptyCloud)?;
    let (min, max) = points.iter().fold((first, first), |(lo, hi), p| {
        (
            Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
            Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
        )
    });
    Ok(Aabb { min, max })
}

/// Integer voxel coordinate `(ix, iy, iz)` on the absolute grid of edge `size`.
pub type VoxelIndex = [i64; 3];

#[inline]
fn absolute_voxel(p: &Point3, size: f64) -> VoxelIndex {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

fn check_voxel_size(voxel_size: f64) -> Result<()> {
    if voxel_size.is_finite() && voxel_size > 0.0 {
        Ok(())
    } else {
        Err(Error::param("voxel_size", format!("must be positive, got {voxel_size}")))
    }
}

/// Sparse occupancy grid. Indices are relative to `origin`, which sits on a
/// multiple of `voxel_size`, so two grids of the same size share boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    origin: Point3,
    voxel_size: f64,
    occupied: BTreeSet<VoxelIndex>,
}

impl VoxelGrid {
    pub fn empty(voxel_size: f64) -> Result<Self> {
        check_voxel_size(voxel_size)?;
        Ok(VoxelGrid {
            origin: Point3::ORIGIN,
            voxel_size,
            occupied: BTreeSet::new(),
        })
    }

    pub fn from_indices(
        origin: Point3,
        voxel_size: f64,
        occupied: impl IntoIterator<Item = VoxelIndex>,
    ) -> Result<Self> {
        check_voxel_size(voxel_size)?;
        Ok(VoxelGrid {
            origin,
            voxel_size,
            occupied: occupied.into_iter().collect(),
        })
    }

    /// Voxels touched by at least one point. An empty slice gives an empty grid.
    pub fn from_points(points: &[Point3], voxel_size: f64) -> Result<Self> {
        check_voxel_size(voxel_size)?;
        let absolute: BTreeSet<VoxelIndex> =
            points.iter().map(|p| absolute_voxel(p, voxel_size)).collect();
        let Some(first) = absolute.first() else {
            return Self::empty(voxel_size);
        };
        let mut base = *first;
        for v in &absolute {
            for a in 0..3 {
                base[a] = base[a].min(v[a]);
            }
        }
        let origin = Point3::new(
            base[0] as f64 * voxel_size,
            base[1] as f64 * voxel_size,
            base[2] as f64 * voxel_size,
        );
        let occupied = absolute
            .into_iter()
            .map(|v| [v[0] - base[0], v[1] - base[1], v[2] - base[2]])
            .collect();
        Ok(VoxelGrid {
            origin,
            voxel_size,
            occupied,
        })
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn occupied(&self) -> &BTreeSet<VoxelIndex> {
        &self.occupied
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }

    pub fn occupancy_volume(&self) -> f64 {
        occupancy_volume(self)
    }
}

/// `|occupied| · voxel_size³`
pub fn occupancy_volume(grid: &VoxelGrid) -> f64 {
    grid.occupied.len() as f64 * grid.voxel_size.powi(3)
}

/// One point per occupied voxel, the mean of its members, ordered by voxel
/// index (z, then y, then x). Colors are averaged and rounded.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    check_voxel_size(voxel_size)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut buckets: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let [ix, iy, iz] = absolute_voxel(p, voxel_size);
        buckets.entry([iz, iy, ix]).or_default().push(i);
    }

    let mut points = Vec::with_capacity(buckets.len());
    let mut colors = cloud.colors.as_ref().map(|_| Vec::with_capacity(buckets.len()));
    for members in buckets.values() {
        let sum = pairwise_sum(members, &|&i: &usize| cloud.points[i].to_array());
        let n = members.len() as f64;
        points.push(Point3::new(sum[0] / n, sum[1] / n, sum[2] / n));
        if let (Some(out), Some(src)) = (colors.as_mut(), cloud.colors.as_ref()) {
            let mut acc = [0u64; 3];
            for &i in members {
                for c in 0..3 {
                    acc[c] += src[i][c] as u64;
                }
            }
            out.push(acc.map(|s| (s as f64 / n).round() as u8));
        }
    }
    Ok(PointCloud { points, colors })
}
