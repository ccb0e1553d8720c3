//! Point-cloud registration and difference inspection.
//!
//! A field scan is aligned onto a reference scan with similarity ICP
//! (scale, rotation, translation), then both clouds are classified point by
//! point against a distance threshold. Unmatched regions are measured by
//! voxel occupancy and painted into a difference cloud.

pub mod comparison;
pub mod error;
pub mod geometry;
pub mod pipeline;
pub mod ply;
pub mod registration;
pub mod spatial;
pub mod synth;

pub use comparison::{
    auto_threshold, classify, colorize_diff, compare, ComparisonResult, MatchLabel, Palette,
};
pub use error::{Error, Result};
pub use geometry::{Aabb, Point3, PointCloud, Rgb, SimilarityTransform, VoxelGrid};
pub use registration::{icp, initial_align, register, estimate_similarity, IcpParams, IcpResult};
pub use spatial::KdTree;
