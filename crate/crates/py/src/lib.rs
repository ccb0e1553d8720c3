//! Python bindings: point clouds, similarity transforms, registration,
//! comparison, PLY I/O, synthetic presets and the full inspection pipeline.

use std::fmt::Display;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use cloud_inspect_core::geometry::voxel_downsample;
use cloud_inspect_core::pipeline::{self, AlignOptions, CompareOptions, Sources};
use cloud_inspect_core::ply::{read_ply_file, write_ply_file, CoordinateKind, PlyFormat};
use cloud_inspect_core::registration::IcpResult;
use cloud_inspect_core::synth::{build_case, DefectChoice, Perturbation, Preset};
use cloud_inspect_core::{IcpParams, Palette, PointCloud, SimilarityTransform};
use nalgebra::{Matrix3, Vector3};

create_exception!(cloud_inspect, CloudInspectError, PyException);

fn err(e: impl Display) -> PyErr {
    CloudInspectError::new_err(e.to_string())
}

#[pyclass(name = "PointCloud", module = "cloud_inspect", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPointCloud {
    inner: PointCloud,
}

impl From<PointCloud> for PyPointCloud {
    fn from(inner: PointCloud) -> Self {
        PyPointCloud { inner }
    }
}

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (points, colors=None))]
    fn new(points: Vec<[f64; 3]>, colors: Option<Vec<[u8; 3]>>) -> PyResult<Self> {
        let pts = points.into_iter().map(Into::into).collect();
        PointCloud::with_colors(pts, colors).map(Into::into).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points, colors={})", self.inner.len(), self.inner.has_colors())
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        self.inner.points().iter().map(|p| p.to_array()).collect()
    }

    #[getter]
    fn colors(&self) -> Option<Vec<[u8; 3]>> {
        self.inner.colors().map(<[_]>::to_vec)
    }

    fn centroid(&self) -> PyResult<[f64; 3]> {
        self.inner.centroid().map(|p| p.to_array()).map_err(err)
    }

    /// `(min, max)` corners.
    fn bounding_box(&self) -> PyResult<([f64; 3], [f64; 3])> {
        let b = self.inner.bounding_box().map_err(err)?;
        Ok((b.min.to_array(), b.max.to_array()))
    }

    fn voxel_downsample(&self, voxel_size: f64) -> PyResult<Self> {
        voxel_downsample(&self.inner, voxel_size).map(Into::into).map_err(err)
    }
}

#[pyclass(name = "SimilarityTransform", module = "cloud_inspect", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTransform {
    inner: SimilarityTransform,
}

impl From<SimilarityTransform> for PyTransform {
    fn from(inner: SimilarityTransform) -> Self {
        PyTransform { inner }
    }
}

#[pymethods]
impl PyTransform {
    /// `x ↦ scale · rotation · x + translation`; rotation given as rows.
    #[new]
    #[pyo3(signature = (scale=1.0, rotation=None, translation=None))]
    fn new(scale: f64, rotation: Option<[[f64; 3]; 3]>, translation: Option<[f64; 3]>) -> PyResult<Self> {
        let r = rotation.map_or_else(Matrix3::identity, |rows| {
            Matrix3::from_row_slice(&rows.concat())
        });
        let t = translation.map_or_else(Vector3::zeros, Vector3::from);
        SimilarityTransform::new(scale, r, t).map(Into::into).map_err(err)
    }

    #[staticmethod]
    fn identity() -> Self {
        SimilarityTransform::identity().into()
    }

    /// Rotation by `angle` radians about `axis`.
    #[staticmethod]
    fn from_axis_angle(axis: [f64; 3], angle: f64) -> PyResult<Self> {
        SimilarityTransform::from_axis_angle(Vector3::from(axis), angle)
            .map(Into::into)
            .map_err(err)
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale()
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        self.inner.rotation_rows()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = self.inner.translation();
        [t.x, t.y, t.z]
    }

    fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.inner.apply_point(&p.into()).to_array()
    }

    fn apply(&self, cloud: &PyPointCloud) -> PyPointCloud {
        self.inner.apply(&cloud.inner).into()
    }

    /// `self ∘ other`: apply `other` first.
    fn compose(&self, other: &PyTransform) -> Self {
        self.inner.compose(&other.inner).into()
    }

    fn inverse(&self) -> Self {
        self.inner.inverse().into()
    }

    /// Angle in radians of the relative rotation between the two transforms.
    fn rotation_angle_to(&self, other: &PyTransform) -> f64 {
        self.inner.rotation_angle_to(&other.inner)
    }

    fn __repr__(&self) -> String {
        let t = self.translation();
        format!("SimilarityTransform(scale={}, translation={:?})", self.inner.scale(), t)
    }
}

#[pyclass(name = "RegistrationResult", module = "cloud_inspect", frozen, get_all)]
pub struct PyRegistration {
    transform: PyTransform,
    iterations_run: usize,
    converged: bool,
    final_rmse: f64,
    /// `(cost, rmse, correspondence_count)` per iteration.
    history: Vec<(f64, f64, usize)>,
}

impl From<IcpResult> for PyRegistration {
    fn from(r: IcpResult) -> Self {
        PyRegistration {
            transform: r.transform.into(),
            iterations_run: r.iterations_run,
            converged: r.converged,
            final_rmse: r.final_rmse,
            history: r
                .history
                .iter()
                .map(|h| (h.cost, h.rmse, h.correspondence_count))
                .collect(),
        }
    }
}

/// Register `source` onto `target`. `max_correspondence_distance` defaults
/// to 5% of the target diagonal; `unbounded` keeps every pair.
#[pyfunction]
#[pyo3(signature = (source, target, with_scaling=true, max_iterations=50, tolerance=None, max_correspondence_distance=None, unbounded=false))]
fn register(
    source: &PyPointCloud,
    target: &PyPointCloud,
    with_scaling: bool,
    max_iterations: usize,
    tolerance: Option<f64>,
    max_correspondence_distance: Option<f64>,
    unbounded: bool,
) -> PyResult<PyRegistration> {
    let mut params = IcpParams::for_target(&target.inner).map_err(err)?;
    params.with_scaling = with_scaling;
    params.max_iterations = max_iterations;
    if let Some(t) = tolerance {
        params.tolerance = t;
    }
    if unbounded {
        params.max_correspondence_distance = None;
    } else if let Some(d) = max_correspondence_distance {
        params.max_correspondence_distance = Some(d);
    }
    cloud_inspect_core::register(&source.inner, &target.inner, &params)
        .map(Into::into)
        .map_err(err)
}

#[pyclass(name = "ComparisonResult", module = "cloud_inspect", frozen, get_all)]
pub struct PyComparison {
    threshold: f64,
    voxel_size: f64,
    unmatched_count_field: usize,
    unmatched_count_reference: usize,
    unmatched_volume_field: f64,
    unmatched_volume_reference: f64,
    /// True where a field point is unmatched.
    field_unmatched: Vec<bool>,
    reference_unmatched: Vec<bool>,
    field_distances: Vec<f64>,
    reference_distances: Vec<f64>,
}

/// Bidirectional comparison of clouds that already share a frame.
/// `threshold` defaults to the automatic threshold, `voxel_size` to the threshold.
#[pyfunction]
#[pyo3(signature = (field, reference, threshold=None, voxel_size=None))]
fn compare(
    field: &PyPointCloud,
    reference: &PyPointCloud,
    threshold: Option<f64>,
    voxel_size: Option<f64>,
) -> PyResult<PyComparison> {
    let threshold = match threshold {
        Some(t) => t,
        None => cloud_inspect_core::auto_threshold(&field.inner, &reference.inner).map_err(err)?,
    };
    let r = cloud_inspect_core::compare(&field.inner, &reference.inner, threshold, voxel_size.unwrap_or(threshold))
        .map_err(err)?;
    Ok(PyComparison {
        threshold: r.threshold,
        voxel_size: r.voxel_size,
        unmatched_count_field: r.unmatched_count_a,
        unmatched_count_reference: r.unmatched_count_b,
        unmatched_volume_field: r.unmatched_volume_a,
        unmatched_volume_reference: r.unmatched_volume_b,
        field_unmatched: r.labels_a_vs_b.iter().map(|l| l.is_unmatched()).collect(),
        reference_unmatched: r.labels_b_vs_a.iter().map(|l| l.is_unmatched()).collect(),
        field_distances: r.nearest_distance_a,
        reference_distances: r.nearest_distance_b,
    })
}

#[pyfunction]
fn auto_threshold(field: &PyPointCloud, reference: &PyPointCloud) -> PyResult<f64> {
    cloud_inspect_core::auto_threshold(&field.inner, &reference.inner).map_err(err)
}

#[pyfunction]
fn read_ply(path: &str) -> PyResult<PyPointCloud> {
    read_ply_file(path)
        .map(|(_, c)| c.into())
        .map_err(|e| err(format!("{path}: {e}")))
}

#[pyfunction]
#[pyo3(signature = (path, cloud, ascii=false, f32=false))]
fn write_ply(path: &str, cloud: &PyPointCloud, ascii: bool, f32: bool) -> PyResult<()> {
    let format = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    let coords = if f32 { CoordinateKind::F32 } else { CoordinateKind::F64 };
    write_ply_file(path, &cloud.inner, format, coords).map_err(err)
}

#[pyclass(name = "SynthCase", module = "cloud_inspect", frozen, get_all)]
pub struct PySynthCase {
    reference: PyPointCloud,
    field: PyPointCloud,
    /// Maps the defected reference onto the field.
    true_transform: PyTransform,
    defect_volume: f64,
    voxel_size: f64,
    reference_unmatched: Vec<bool>,
    field_unmatched: Vec<bool>,
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    cloud_inspect_core::synth::PRESETS.iter().map(|p| p.name()).collect()
}

/// Generate a preset scene, inject its defects and perturb the field copy.
#[pyfunction]
#[pyo3(signature = (preset, seed=0, points=50_000, defect="remove", rotation_max_deg=180.0, translation_max_frac=0.5, scale_range=(0.5, 2.0), noise_sigma=0.0))]
#[allow(clippy::too_many_arguments)]
fn synth_case(
    preset: &str,
    seed: u64,
    points: usize,
    defect: &str,
    rotation_max_deg: f64,
    translation_max_frac: f64,
    scale_range: (f64, f64),
    noise_sigma: f64,
) -> PyResult<PySynthCase> {
    let preset: Preset = preset.parse().map_err(err)?;
    let choice: DefectChoice = defect.parse().map_err(err)?;
    let perturbation = Perturbation {
        rotation_max_deg,
        translation_max_frac,
        scale_range,
        noise_sigma,
    };
    let case = build_case(&preset.scene(seed, points), &preset.defects(choice), &perturbation, None).map_err(err)?;
    Ok(PySynthCase {
        reference: case.reference.into(),
        field: case.field.into(),
        true_transform: case.true_transform.into(),
        defect_volume: case.defect_volume_truth,
        voxel_size: case.defect_voxel_size,
        reference_unmatched: case.reference_truth.iter().map(|l| l.is_unmatched()).collect(),
        field_unmatched: case.field_truth.iter().map(|l| l.is_unmatched()).collect(),
    })
}

#[pyclass(name = "InspectionResult", module = "cloud_inspect", frozen, get_all)]
pub struct PyInspection {
    /// "PASS" or "DEFECT".
    verdict: String,
    /// The full report as JSON text.
    report_json: String,
    transform: PyTransform,
    aligned: PyPointCloud,
    diff: PyPointCloud,
}

/// Register `field` onto `reference`, compare, and build the report.
#[pyfunction]
#[pyo3(signature = (reference, field, threshold=None, volume_limit=0.0, with_scaling=true, pink=false))]
fn inspect(
    reference: &PyPointCloud,
    field: &PyPointCloud,
    threshold: Option<f64>,
    volume_limit: f64,
    with_scaling: bool,
    pink: bool,
) -> PyResult<PyInspection> {
    let align = AlignOptions {
        with_scaling,
        ..AlignOptions::default()
    };
    let compare = CompareOptions {
        threshold,
        volume_limit,
        palette: if pink { Palette::Pink } else { Palette::RedGreen },
        ..CompareOptions::default()
    };
    let out = pipeline::inspect(&Sources::default(), &reference.inner, &field.inner, &align, &compare, false)
        .map_err(err)?;
    Ok(PyInspection {
        verdict: out.report.verdict.to_string(),
        report_json: out.report.to_json(),
        transform: out.align.icp.transform.into(),
        aligned: out.align.aligned.into(),
        diff: out.compare.diff.into(),
    })
}

#[pymodule]
fn cloud_inspect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CloudInspectError", m.py().get_type::<CloudInspectError>())?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyTransform>()?;
    m.add_class::<PyRegistration>()?;
    m.add_class::<PyComparison>()?;
    m.add_class::<PySynthCase>()?;
    m.add_class::<PyInspection>()?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(auto_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(read_ply, m)?)?;
    m.add_function(wrap_pyfunction!(write_ply, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(synth_case, m)?)?;
    m.add_function(wrap_pyfunction!(inspect, m)?)?;
    Ok(())
}
