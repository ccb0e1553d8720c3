//! Coarse alignment and similarity ICP.
//!
//! [`estimate_similarity`] is the closed-form least-squares solver used as
//! the minimization step; [`initial_align`] gives a moment-based starting
//! transform; [`icp`] alternates nearest-neighbor matching and re-estimation.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bounding_box, mean_point, pairwise_sum_scalar, Point3, PointCloud, SimilarityTransform,
};
use crate::spatial::KdTree;

pub const DEFAULT_MAX_ITERATIONS: usize = 50;
/// Default tolerance, as a fraction of the target bounding-box diagonal.
pub const DEFAULT_TOLERANCE_FRACTION: f64 = 1e-6;
/// Default correspondence bound, as a fraction of the target bounding-box diagonal.
pub const DEFAULT_CORRESPONDENCE_FRACTION: f64 = 0.05;

const SKEW_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the transform moves no bbox corner of the source by this much.
    pub tolerance: f64,
    /// `None` means unbounded.
    pub max_correspondence_distance: Option<f64>,
    pub with_scaling: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: 1e-9,
            max_correspondence_distance: None,
            with_scaling: true,
        }
    }
}

impl IcpParams {
    /// Defaults scaled to the target: tolerance 1e-6 and correspondence
    /// bound 5% of the target's bbox diagonal.
    pub fn for_target(target: &PointCloud) -> Result<Self> {
        let diag = bounding_box(target)?.diagonal();
        let diag = if diag > 0.0 { diag } else { 1.0 };
        Ok(IcpParams {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE_FRACTION * diag,
            max_correspondence_distance: Some(DEFAULT_CORRESPONDENCE_FRACTION * diag),
            with_scaling: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::param("max_iterations", "must be at least 1"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::param("tolerance", format!("must be positive, got {}", self.tolerance)));
        }
        if let Some(d) = self.max_correspondence_distance {
            if !(d > 0.0) || d.is_nan() {
                return Err(Error::param(
                    "max_correspondence_distance",
                    format!("must be positive, got {d}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Sum of correspondence distances.
    pub cost: f64,
    /// Root mean squared correspondence distance.
    pub rmse: f64,
    pub correspondence_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps source coordinates into the target frame.
    pub transform: SimilarityTransform,
    pub iterations_run: usize,
    pub converged: bool,
    /// One record per iteration, measured under the transform entering it.
    pub history: Vec<IterationRecord>,
    /// Residual under the returned transform.
    pub final_rmse: f64,
    pub final_correspondence_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub distance: f64,
}

/// Pairs in ascending source-index order; each source index at most once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn record(&self) -> IterationRecord {
        let cost = pairwise_sum_scalar(&self.pairs, &|c: &Correspondence| c.distance);
        let sq = pairwise_sum_scalar(&self.pairs, &|c: &Correspondence| c.distance * c.distance);
        let n = self.pairs.len();
        IterationRecord {
            cost,
            rmse: if n == 0 { 0.0 } else { (sq / n as f64).sqrt() },
            correspondence_count: n,
        }
    }
}

/// Match each (already transformed) source point to its nearest target point.
pub fn find_correspondences(
    tree: &KdTree,
    moved_source: &[Point3],
    max_distance: Option<f64>,
) -> Result<CorrespondenceSet> {
    let hits: Vec<Option<(usize, f64)>> = match max_distance {
        Some(r) => tree
            .nearest_within_batch(moved_source, r)?
            .into_iter()
            .map(|h| h.map(|n| (n.index, n.distance)))
            .collect(),
        None => tree
            .nearest_batch(moved_source)?
            .into_iter()
            .map(|n| Some((n.index, n.distance)))
            .collect(),
    };
    let pairs = hits
        .into_iter()
        .enumerate()
        .filter_map(|(source, h)| {
            h.map(|(target, distance)| Correspondence {
                source,
                target,
                distance,
            })
        })
        .collect();
    Ok(CorrespondenceSet { pairs })
}

fn covariance_about(points: &[Point3], center: &Point3) -> Matrix3<f64> {
    let mut c = Matrix3::zeros();
    for p in points {
        let d = (*p - *center).to_vector();
        c += d * d.transpose();
    }
    c / points.len() as f64
}

/// Least-squares similarity (or rigid, when `with_scaling` is false) taking
/// `source[i]` onto `target[i]`. Closed form via SVD of the centered
/// cross-covariance, with reflection correction.
pub fn estimate_similarity(
    source: &[Point3],
    target: &[Point3],
    with_scaling: bool,
) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch(format!(
            "{} source vs {} target points",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::InsufficientCorrespondences(n));
    }
    let mu_s = mean_point(source)?;
    let mu_t = mean_point(target)?;

    let var_s = pairwise_sum_scalar(source, &|p: &Point3| p.distance_squared(&mu_s)) / n as f64;
    let spread = var_s.sqrt();
    if spread == 0.0 || spread <= 1e-12 * mu_s.norm() {
        return Err(Error::DegenerateConfiguration("all source points coincide"));
    }

    let mut sigma = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = (*s - mu_s).to_vector();
        let dt = (*t - mu_t).to_vector();
        sigma += dt * ds.transpose();
    }
    sigma /= n as f64;

    let svd = sigma.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let d = svd.singular_values;

    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        let weakest = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap_or(2);
        signs[weakest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = if with_scaling {
        d.component_mul(&signs).sum() / var_s
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration("non-positive scale estimate"));
    }
    let translation = mu_t.to_vector() - rotation * mu_s.to_vector() * scale;
    SimilarityTransform::new(scale, rotation, translation)
}

struct Moments {
    centroid: Point3,
    rms_radius: f64,
    axes: Matrix3<f64>,
}

fn principal_moments(points: &[Point3]) -> Result<Moments> {
    let centroid = mean_point(points)?;
    let cov = covariance_about(points, &centroid);
    let rms_radius = cov.trace().max(0.0).sqrt();
    if rms_radius == 0.0 || rms_radius <= 1e-12 * centroid.norm() {
        return Err(Error::DegenerateConfiguration("all points coincide"));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut axes = Matrix3::zeros();
    for (col, &k) in order.iter().enumerate() {
        let mut axis = eig.eigenvectors.column(k).into_owned();
        let (m2, m3) = points.iter().fold((0.0, 0.0), |(m2, m3), p| {
            let t = (*p - centroid).to_vector().dot(&axis);
            (m2 + t * t, m3 + t * t * t)
        });
        let skew = if m2 > 0.0 {
            let n = points.len() as f64;
            (m3 / n) / (m2 / n).powf(1.5)
        } else {
            0.0
        };
        if skew < -SKEW_EPS {
            axis = -axis;
        }
        axes.set_column(col, &axis);
    }
    if axes.determinant() < 0.0 {
        let last = -axes.column(2).into_owned();
        axes.set_column(2, &last);
    }
    Ok(Moments {
        centroid,
        rms_radius,
        axes,
    })
}

/// Moment-based coarse alignment of `source` onto `target`: centroids,
/// RMS radii, and principal axes oriented by the sign of their third moment.
pub fn initial_align(source: &PointCloud, target: &PointCloud) -> Result<SimilarityTransform> {
    for (name, c) in [("source", source), ("target", target)] {
        if c.len() < 3 {
            return Err(Error::InvalidCloud(format!(
                "{name} needs at least 3 points, has {}",
                c.len()
            )));
        }
    }
    let s = principal_moments(source.points())?;
    let t = principal_moments(target.points())?;
    let rotation = t.axes * s.axes.transpose();
    let scale = t.rms_radius / s.rms_radius;
    let translation = t.centroid.to_vector() - rotation * s.centroid.to_vector() * scale;
    SimilarityTransform::new(scale, rotation, translation)
}

/// Same rotation, unit scale, translation re-solved to match centroids.
pub(crate) fn with_unit_scale(t: &SimilarityTransform, source: &PointCloud, target: &PointCloud) -> Result<SimilarityTransform> {
    let mu_s = mean_point(source.points())?;
    let mu_t = mean_point(target.points())?;
    let translation = mu_t.to_vector() - t.rotation() * mu_s.to_vector();
    Ok(SimilarityTransform::from_parts_unchecked(1.0, *t.rotation(), translation))
}

/// Refine `init` by iterative closest point. The target is indexed once;
/// each iteration re-matches the transformed source and re-solves the full
/// source → target transform.
pub fn icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &SimilarityTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    params.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::build(target)?;
    let probes = bounding_box(source)?.corners();
    let src = source.points();
    let tgt = target.points();

    let mut current = *init;
    let mut history = Vec::new();
    let mut converged = false;

    for iteration in 1..=params.max_iterations {
        let moved: Vec<Point3> = src.par_iter().map(|p| current.apply_point(p)).collect();
        let pairs = find_correspondences(&tree, &moved, params.max_correspondence_distance)?;
        if pairs.len() < 3 {
            return Err(Error::CorrespondenceStarvation {
                iteration,
                count: pairs.len(),
            });
        }
        history.push(pairs.record());

        let (from, to): (Vec<Point3>, Vec<Point3>) = pairs
            .pairs
            .iter()
            .map(|c| (src[c.source], tgt[c.target]))
            .unzip();
        let next = estimate_similarity(&from, &to, params.with_scaling)?;
        let change = current.max_displacement(&next, &probes);
        current = next;
        if change < params.tolerance {
            converged = true;
            break;
        }
    }

    let moved: Vec<Point3> = src.par_iter().map(|p| current.apply_point(p)).collect();
    let last = find_correspondences(&tree, &moved, params.max_correspondence_distance)?.record();

    Ok(IcpResult {
        transform: current,
        iterations_run: history.len(),
        converged,
        history,
        final_rmse: last.rmse,
        final_correspondence_count: last.correspondence_count,
    })
}

/// One-call alignment: [`initial_align`] followed by [`icp`]. Without
/// scaling the coarse estimate is pinned to unit scale.
pub fn register(source: &PointCloud, target: &PointCloud, params: &IcpParams) -> Result<IcpResult> {
    let mut init = initial_align(source, target)?;
    if !params.with_scaling {
        init = with_unit_scale(&init, source, target)?;
    }
    icp(source, target, &init, params)
}
