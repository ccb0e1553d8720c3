//! End-to-end inspection: optional downsampling, registration of the field
//! scan onto the reference, bidirectional comparison, and the JSON report.

use std::fmt;
use std::time::Instant;

use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparison::{auto_threshold, colorize_diff_with, compare, ComparisonResult, Palette};
use crate::error::Error;
use crate::geometry::{voxel_downsample, PointCloud, SimilarityTransform};
use crate::registration::{initial_align, icp, with_unit_scale, IcpParams, IcpResult, IterationRecord};

/// Clouds above this size are downsampled before registration by default.
pub const AUTO_DOWNSAMPLE_POINTS: usize = 200_000;

pub const TOOL_NAME: &str = "cloud-inspect";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Failure of one pipeline stage; the stage prefixes the message.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Input(#[source] Error),
    #[error("registration failed: {0}")]
    Registration(#[source] Error),
    #[error("comparison failed: {0}")]
    Comparison(#[source] Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    /// `auto_threshold / 3` when either cloud exceeds [`AUTO_DOWNSAMPLE_POINTS`].
    #[default]
    Auto,
    Off,
    Voxel(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrespondenceBound {
    /// 5% of the reference bbox diagonal.
    #[default]
    Default,
    Unbounded,
    Distance(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignOptions {
    pub downsample: Downsample,
    pub with_scaling: bool,
    pub max_iterations: usize,
    /// Absolute tolerance; `None` means 1e-6 × reference bbox diagonal.
    pub tolerance: Option<f64>,
    pub correspondence: CorrespondenceBound,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            downsample: Downsample::Auto,
            with_scaling: true,
            max_iterations: crate::registration::DEFAULT_MAX_ITERATIONS,
            tolerance: None,
            correspondence: CorrespondenceBound::Default,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompareOptions {
    /// `None` selects [`auto_threshold`].
    pub threshold: Option<f64>,
    /// `None` uses the threshold.
    pub voxel_size: Option<f64>,
    pub volume_limit: f64,
    pub palette: Palette,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            threshold: None,
            voxel_size: None,
            volume_limit: 0.0,
            palette: Palette::RedGreen,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    User,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "DEFECT")]
    Defect,
}

impl Verdict {
    pub fn from_volumes(field: f64, reference: f64, limit: f64) -> Self {
        if field.max(reference) > limit {
            Verdict::Defect
        } else {
            Verdict::Pass
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Defect => "DEFECT",
        })
    }
}

/// Transform as written into reports: row-major rotation plus the same
/// rotation as a unit quaternion `[w, x, y, z]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub quaternion_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&SimilarityTransform> for TransformReport {
    fn from(t: &SimilarityTransform) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*t.rotation()));
        let tr = t.translation();
        TransformReport {
            scale: t.scale(),
            rotation: t.rotation_rows(),
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
            translation: [tr.x, tr.y, tr.z],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputsReport {
    pub reference_path: String,
    pub field_path: String,
    pub reference_points: usize,
    pub field_points: usize,
    /// Point counts after downsampling (equal to the above when skipped).
    pub reference_points_registered: usize,
    pub field_points_registered: usize,
    pub downsample_voxel: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub initial_transform: TransformReport,
    pub final_transform: TransformReport,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_rmse: f64,
    pub with_scaling: bool,
    pub tolerance: f64,
    pub max_correspondence_distance: Option<f64>,
    pub history: Vec<IterationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub voxel_size: f64,
    pub unmatched_count_field: usize,
    pub unmatched_count_reference: usize,
    pub unmatched_volume_field: f64,
    pub unmatched_volume_reference: f64,
    pub volume_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub registration_ms: Option<f64>,
    pub comparison_ms: Option<f64>,
}

/// Machine-readable inspection result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectionReport {
    pub tool: ToolInfo,
    pub inputs: InputsReport,
    pub registration: Option<RegistrationReport>,
    pub comparison: ComparisonReport,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl InspectionReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug)]
pub struct AlignOutcome {
    pub initial: SimilarityTransform,
    pub icp: IcpResult,
    pub params: IcpParams,
    /// The full field cloud mapped into the reference frame.
    pub aligned: PointCloud,
    pub downsample_voxel: Option<f64>,
    pub reference_points_registered: usize,
    pub field_points_registered: usize,
    pub elapsed_ms: f64,
}

impl AlignOutcome {
    pub fn report(&self) -> RegistrationReport {
        RegistrationReport {
            initial_transform: (&self.initial).into(),
            final_transform: (&self.icp.transform).into(),
            iterations_run: self.icp.iterations_run,
            converged: self.icp.converged,
            final_rmse: self.icp.final_rmse,
            with_scaling: self.params.with_scaling,
            tolerance: self.params.tolerance,
            max_correspondence_distance: self.params.max_correspondence_distance,
            history: self.icp.history.clone(),
        }
    }
}

fn downsample_voxel(reference: &PointCloud, field: &PointCloud, mode: Downsample) -> Result<Option<f64>, Error> {
    Ok(match mode {
        Downsample::Off => None,
        Downsample::Voxel(v) => Some(v),
        Downsample::Auto => {
            if reference.len().max(field.len()) > AUTO_DOWNSAMPLE_POINTS {
                Some(auto_threshold(field, reference)? / 3.0)
            } else {
                None
            }
        }
    })
}

/// Register `field` onto `reference` and map the whole field cloud across.
pub fn align(reference: &PointCloud, field: &PointCloud, opts: &AlignOptions) -> Result<AlignOutcome, PipelineError> {
    let start = Instant::now();
    if reference.is_empty() || field.is_empty() {
        return Err(PipelineError::Input(Error::EmptyCloud));
    }
    let voxel = downsample_voxel(reference, field, opts.downsample).map_err(PipelineError::Input)?;
    let (target, source) = match voxel {
        Some(v) => (
            voxel_downsample(reference, v).map_err(PipelineError::Input)?,
            voxel_downsample(field, v).map_err(PipelineError::Input)?,
        ),
        None => (reference.clone(), field.clone()),
    };

    let mut params = IcpParams::for_target(&target).map_err(PipelineError::Input)?;
    params.with_scaling = opts.with_scaling;
    params.max_iterations = opts.max_iterations;
    if let Some(t) = opts.tolerance {
        params.tolerance = t;
    }
    match opts.correspondence {
        CorrespondenceBound::Default => {}
        CorrespondenceBound::Unbounded => params.max_correspondence_distance = None,
        CorrespondenceBound::Distance(d) => params.max_correspondence_distance = Some(d),
    }
    params.validate().map_err(PipelineError::Input)?;

    let mut initial = initial_align(&source, &target).map_err(PipelineError::Registration)?;
    if !params.with_scaling {
        initial = with_unit_scale(&initial, &source, &target).map_err(PipelineError::Registration)?;
    }
    let result = icp(&source, &target, &initial, &params).map_err(PipelineError::Registration)?;
    let aligned = result.transform.apply(field);
    Ok(AlignOutcome {
        initial,
        aligned,
        params,
        icp: result,
        downsample_voxel: voxel,
        reference_points_registered: target.len(),
        field_points_registered: source.len(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub result: ComparisonResult,
    pub diff: PointCloud,
    pub section: ComparisonReport,
    pub verdict: Verdict,
    pub elapsed_ms: f64,
}

/// Compare an already aligned field cloud against the reference.
pub fn compare_aligned(
    reference: &PointCloud,
    field: &PointCloud,
    opts: &CompareOptions,
) -> Result<CompareOutcome, PipelineError> {
    let start = Instant::now();
    let (threshold, source) = match opts.threshold {
        Some(t) => (t, ThresholdSource::User),
        None => (
            auto_threshold(field, reference).map_err(PipelineError::Comparison)?,
            ThresholdSource::Auto,
        ),
    };
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(PipelineError::Input(Error::InvalidParameter {
            name: "threshold",
            reason: format!("must be positive, got {threshold}"),
        }));
    }
    if !(opts.volume_limit >= 0.0) {
        return Err(PipelineError::Input(Error::InvalidParameter {
            name: "volume_limit",
            reason: format!("must be non-negative, got {}", opts.volume_limit),
        }));
    }
    let voxel_size = opts.voxel_size.unwrap_or(threshold);
    let result = compare(field, reference, threshold, voxel_size).map_err(PipelineError::Comparison)?;
    let diff = colorize_diff_with(field, reference, &result, opts.palette).map_err(PipelineError::Comparison)?;
    let verdict = Verdict::from_volumes(result.unmatched_volume_a, result.unmatched_volume_b, opts.volume_limit);
    let section = ComparisonReport {
        threshold,
        threshold_source: source,
        voxel_size,
        unmatched_count_field: result.unmatched_count_a,
        unmatched_count_reference: result.unmatched_count_b,
        unmatched_volume_field: result.unmatched_volume_a,
        unmatched_volume_reference: result.unmatched_volume_b,
        volume_limit: opts.volume_limit,
    };
    Ok(CompareOutcome {
        result,
        diff,
        section,
        verdict,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Debug)]
pub struct InspectionOutcome {
    pub align: AlignOutcome,
    pub compare: CompareOutcome,
    pub report: InspectionReport,
}

/// File labels recorded in the report.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    pub reference_path: String,
    pub field_path: String,
}

/// Report for a compare-only run (no registration section).
pub fn comparison_report(
    sources: &Sources,
    reference: &PointCloud,
    field: &PointCloud,
    outcome: &CompareOutcome,
    with_timing: bool,
) -> InspectionReport {
    InspectionReport {
        tool: ToolInfo::default(),
        inputs: InputsReport {
            reference_path: sources.reference_path.clone(),
            field_path: sources.field_path.clone(),
            reference_points: reference.len(),
            field_points: field.len(),
            reference_points_registered: reference.len(),
            field_points_registered: field.len(),
            downsample_voxel: None,
        },
        registration: None,
        comparison: outcome.section.clone(),
        verdict: outcome.verdict,
        timing: with_timing.then(|| Timing {
            registration_ms: None,
            comparison_ms: Some(outcome.elapsed_ms),
        }),
    }
}

/// Align, then compare, then assemble the full report.
pub fn inspect(
    sources: &Sources,
    reference: &PointCloud,
    field: &PointCloud,
    align_opts: &AlignOptions,
    compare_opts: &CompareOptions,
    with_timing: bool,
) -> Result<InspectionOutcome, PipelineError> {
    let aligned = align(reference, field, align_opts)?;
    let compared = compare_aligned(reference, &aligned.aligned, compare_opts)?;
    let mut report = comparison_report(sources, reference, field, &compared, with_timing);
    report.inputs.reference_points_registered = aligned.reference_points_registered;
    report.inputs.field_points_registered = aligned.field_points_registered;
    report.inputs.downsample_voxel = aligned.downsample_voxel;
    report.registration = Some(aligned.report());
    if let Some(t) = report.timing.as_mut() {
        t.registration_ms = Some(aligned.elapsed_ms);
    }
    Ok(InspectionOutcome {
        align: aligned,
        compare: compared,
        report,
    })
}
