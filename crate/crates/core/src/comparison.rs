//! Bidirectional matched/unmatched classification, unmatched volume, and
//! color-coded difference clouds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Rgb, VoxelGrid};
use crate::spatial::KdTree;

pub const RED: Rgb = [255, 0, 0];
pub const GREEN: Rgb = [0, 255, 0];
pub const GRAY: Rgb = [128, 128, 128];
pub const PINK: Rgb = [255, 105, 180];

/// Multiplier applied to the median nearest-neighbor spacing by [`auto_threshold`].
pub const AUTO_THRESHOLD_FACTOR: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    Matched,
    Unmatched,
}

impl MatchLabel {
    /// Closed rule: a distance exactly at the threshold is a match.
    #[inline]
    pub fn from_distance(distance: f64, threshold: f64) -> Self {
        if distance <= threshold {
            MatchLabel::Matched
        } else {
            MatchLabel::Unmatched
        }
    }

    pub fn is_unmatched(self) -> bool {
        self == MatchLabel::Unmatched
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub labels: Vec<MatchLabel>,
    pub distances: Vec<f64>,
}

impl Classification {
    pub fn unmatched_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_unmatched().then_some(i))
            .collect()
    }

    pub fn unmatched_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_unmatched()).count()
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

/// Nearest-neighbor distance of each cloud point into an indexed reference,
/// labelled against `threshold`.
pub fn classify_against(cloud: &PointCloud, reference: &KdTree, threshold: f64) -> Result<Classification> {
    check_positive("threshold", threshold)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let distances: Vec<f64> = reference
        .nearest_batch(cloud.points())?
        .into_iter()
        .map(|n| n.distance)
        .collect();
    let labels = distances
        .iter()
        .map(|&d| MatchLabel::from_distance(d, threshold))
        .collect();
    Ok(Classification { labels, distances })
}

pub fn classify(cloud: &PointCloud, reference: &PointCloud, threshold: f64) -> Result<Classification> {
    check_positive("threshold", threshold)?;
    classify_against(cloud, &KdTree::build(reference)?, threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonResult {
    /// Field points against the reference.
    pub labels_a_vs_b: Vec<MatchLabel>,
    /// Reference points against the field.
    pub labels_b_vs_a: Vec<MatchLabel>,
    pub nearest_distance_a: Vec<f64>,
    pub nearest_distance_b: Vec<f64>,
    pub threshold: f64,
    pub voxel_size: f64,
    pub unmatched_count_a: usize,
    pub unmatched_count_b: usize,
    pub unmatched_volume_a: f64,
    pub unmatched_volume_b: f64,
}

fn unmatched_volume(cloud: &PointCloud, c: &Classification, voxel_size: f64) -> Result<f64> {
    let pts: Vec<Point3> = c
        .unmatched_indices()
        .into_iter()
        .map(|i| cloud.points()[i])
        .collect();
    Ok(VoxelGrid::from_points(&pts, voxel_size)?.occupancy_volume())
}

/// Classify in both directions and measure the voxel volume of each
/// direction's unmatched points.
pub fn compare(
    field: &PointCloud,
    reference: &PointCloud,
    threshold: f64,
    voxel_size: f64,
) -> Result<ComparisonResult> {
    check_positive("threshold", threshold)?;
    check_positive("voxel_size", voxel_size)?;
    let field_tree = KdTree::build(field)?;
    let reference_tree = KdTree::build(reference)?;
    let a = classify_against(field, &reference_tree, threshold)?;
    let b = classify_against(reference, &field_tree, threshold)?;
    Ok(ComparisonResult {
        unmatched_count_a: a.unmatched_count(),
        unmatched_count_b: b.unmatched_count(),
        unmatched_volume_a: unmatched_volume(field, &a, voxel_size)?,
        unmatched_volume_b: unmatched_volume(reference, &b, voxel_size)?,
        labels_a_vs_b: a.labels,
        labels_b_vs_a: b.labels,
        nearest_distance_a: a.distances,
        nearest_distance_b: b.distances,
        threshold,
        voxel_size,
    })
}

/// Median distance from each point to its nearest non-coincident neighbor.
pub fn median_spacing(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::InvalidCloud(
            "spacing needs at least two points".into(),
        ));
    }
    let tree = KdTree::build(cloud)?;
    let mut spacing = Vec::with_capacity(cloud.len());
    for p in cloud.points() {
        match tree.nearest_distinct(p)? {
            Some(n) => spacing.push(n.distance),
            None => {
                return Err(Error::InvalidCloud("all points coincide".into()));
            }
        }
    }
    Ok(median(&mut spacing))
}

/// Median; the mean of the two middle values for even lengths. `values` must be non-empty.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Threshold derived from the reference sampling density: three times the
/// median nearest-neighbor spacing. The field cloud does not enter.
pub fn auto_threshold(_field: &PointCloud, reference: &PointCloud) -> Result<f64> {
    Ok(AUTO_THRESHOLD_FACTOR * median_spacing(reference)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Palette {
    /// Field-unmatched red, reference-unmatched green, field-matched gray.
    #[default]
    RedGreen,
    /// Field only: unmatched pink, matched gray.
    Pink,
}

pub fn colorize_diff(field: &PointCloud, reference: &PointCloud, result: &ComparisonResult) -> Result<PointCloud> {
    colorize_diff_with(field, reference, result, Palette::RedGreen)
}

/// Merged difference cloud: every field point, followed (red/green palette
/// only) by the reference points that found no match.
pub fn colorize_diff_with(
    field: &PointCloud,
    reference: &PointCloud,
    result: &ComparisonResult,
    palette: Palette,
) -> Result<PointCloud> {
    if result.labels_a_vs_b.len() != field.len() || result.labels_b_vs_a.len() != reference.len() {
        return Err(Error::LengthMismatch(format!(
            "result covers {}/{} points, clouds have {}/{}",
            result.labels_a_vs_b.len(),
            result.labels_b_vs_a.len(),
            field.len(),
            reference.len()
        )));
    }
    let unmatched_color = match palette {
        Palette::RedGreen => RED,
        Palette::Pink => PINK,
    };
    let mut points = field.points().to_vec();
    let mut colors: Vec<Rgb> = result
        .labels_a_vs_b
        .iter()
        .map(|l| if l.is_unmatched() { unmatched_color } else { GRAY })
        .collect();
    if palette == Palette::RedGreen {
        for (p, l) in reference.points().iter().zip(&result.labels_b_vs_a) {
            if l.is_unmatched() {
                points.push(*p);
                colors.push(GREEN);
            }
        }
    }
    PointCloud::with_colors(points, Some(colors))
}
