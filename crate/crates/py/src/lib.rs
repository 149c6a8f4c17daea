use std::collections::BTreeMap;
use std::path::PathBuf;

use aps_core::dataset::{denormalize_position, normalize_position, NormalizationParams, PositionRange};
use aps_core::evaluation::{quat_angle_deg as core_quat_angle, ConfusionMatrix};
use aps_core::image::{BitDepth, Image as CoreImage};
use aps_core::inference::{localize, localize_with_scene, ModelBundle};
use aps_core::orchestration::{run_all as core_run_all, run_stage as core_run_stage, ExperimentConfig, Stage, StageOutcome};
use aps_core::pose::CameraPose;
use aps_core::scene_world::{build_world, render_pointcloud, render_rgb, RenderSettings, WorldModel};
use aps_core::training::pose_loss as core_pose_loss;
use nalgebra::Vector3;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(aps_py, ApsError, PyException);
create_exception!(aps_py, ConfigError, ApsError);
create_exception!(aps_py, DependencyError, ApsError);

fn to_py(e: aps_core::Error) -> PyErr {
    match e.exit_code() {
        2 => ConfigError::new_err(e.to_string()),
        3 => DependencyError::new_err(e.to_string()),
        _ => ApsError::new_err(e.to_string()),
    }
}

fn single_scene(p_min: [f64; 3], p_max: [f64; 3]) -> NormalizationParams {
    NormalizationParams {
        scenes: BTreeMap::from([(0, PositionRange { p_min, p_max })]),
    }
}

/// Maps a position into `[-1, 1]^3` given the scene's component-wise range.
#[pyfunction]
fn normalize(p: [f64; 3], p_min: [f64; 3], p_max: [f64; 3]) -> PyResult<[f64; 3]> {
    normalize_position(p, 0, &single_scene(p_min, p_max)).map_err(to_py)
}

#[pyfunction]
fn denormalize(pn: [f64; 3], p_min: [f64; 3], p_max: [f64; 3]) -> PyResult<[f64; 3]> {
    denormalize_position(pn, 0, &single_scene(p_min, p_max)).map_err(to_py)
}

/// Position error plus `beta` times the error against the unit target
/// quaternion. Quaternions are `(w, x, y, z)`.
#[pyfunction]
#[pyo3(signature = (p_hat, q_hat, p, q, beta = 1.0))]
fn pose_loss(p_hat: [f64; 3], q_hat: [f64; 4], p: [f64; 3], q: [f64; 4], beta: f64) -> PyResult<f64> {
    core_pose_loss(p_hat, q_hat, p, q, beta).map_err(to_py)
}

#[pyfunction]
fn quat_angle_deg(q1: [f64; 4], q2: [f64; 4]) -> PyResult<f64> {
    core_quat_angle(&q1, &q2).map_err(to_py)
}

/// Confusion counts (rows are true scenes) and accuracy.
#[pyfunction]
fn confusion_matrix<'py>(
    py: Python<'py>,
    truth: Vec<usize>,
    predicted: Vec<usize>,
    scene_count: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cm = ConfusionMatrix::from_predictions(&truth, &predicted, scene_count).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("counts", cm.counts.clone())?;
    d.set_item("accuracy", cm.accuracy())?;
    d.set_item("trace", cm.trace())?;
    d.set_item("total", cm.total())?;
    Ok(d)
}

#[pyclass(name = "Image", module = "aps_py")]
struct PyImage {
    inner: CoreImage,
}

#[pymethods]
impl PyImage {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreImage::load_png(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<[f32; 3]> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("pixel ({x}, {y}) out of range")));
        }
        Ok(self.inner.pixel(x, y))
    }

    /// Row-major interleaved RGB values in `[0, 1]`.
    fn to_list(&self) -> Vec<f32> {
        self.inner.as_raw().to_vec()
    }

    #[pyo3(signature = (path, sixteen_bit = false))]
    fn save(&self, path: PathBuf, sixteen_bit: bool) -> PyResult<()> {
        let depth = if sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
        self.inner.save_png(&path, depth).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Procedural rooms with primitives and sampled vertex clouds.
#[pyclass(name = "World", module = "aps_py")]
struct PyWorld {
    inner: WorldModel,
}

fn pose_from(position: [f64; 3], quaternion: [f64; 4]) -> PyResult<CameraPose> {
    CameraPose::new(Vector3::from(position), quaternion).map_err(to_py)
}

#[pymethods]
impl PyWorld {
    #[new]
    fn new(seed: u64, scene_count: usize, extent: f64) -> PyResult<Self> {
        Ok(Self {
            inner: build_world(seed, scene_count, extent).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: WorldModel::load(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn scene_count(&self) -> usize {
        self.inner.scene_count()
    }

    /// `(min, max)` corners of one scene's bounding box.
    fn scene_bounds(&self, scene_id: usize) -> PyResult<([f64; 3], [f64; 3])> {
        let b = self.inner.scene(scene_id).map_err(to_py)?.bounds;
        Ok((b.min.into(), b.max.into()))
    }

    #[pyo3(signature = (scene_id, position, quaternion, size = 64))]
    fn render_rgb(&self, scene_id: usize, position: [f64; 3], quaternion: [f64; 4], size: usize) -> PyResult<PyImage> {
        let pose = pose_from(position, quaternion)?;
        let inner = render_rgb(&self.inner, scene_id, &pose, &RenderSettings::square(size)).map_err(to_py)?;
        Ok(PyImage { inner })
    }

    #[pyo3(signature = (scene_id, position, quaternion, size = 64))]
    fn render_pointcloud(
        &self,
        scene_id: usize,
        position: [f64; 3],
        quaternion: [f64; 4],
        size: usize,
    ) -> PyResult<PyImage> {
        let pose = pose_from(position, quaternion)?;
        let inner = render_pointcloud(&self.inner, scene_id, &pose, &RenderSettings::square(size)).map_err(to_py)?;
        Ok(PyImage { inner })
    }
}

/// Experiment configuration loaded from TOML.
#[pyclass(name = "Config", module = "aps_py")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// `overrides` are `section.key=value` strings.
    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load_with_overrides(&path, &overrides).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, overrides = Vec::new()))]
    fn from_toml(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml_with_overrides(text, &overrides).map_err(to_py)?,
        })
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    #[getter]
    fn run_dir(&self) -> PathBuf {
        self.inner.run_dir()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

fn outcome_str(o: StageOutcome) -> &'static str {
    match o {
        StageOutcome::Ran => "ran",
        StageOutcome::UpToDate => "up-to-date",
    }
}

/// Runs one stage by name; returns `"ran"` or `"up-to-date"`.
#[pyfunction]
#[pyo3(signature = (config, stage, force = false))]
fn run_stage(py: Python<'_>, config: &PyConfig, stage: &str, force: bool) -> PyResult<&'static str> {
    let stage: Stage = stage.parse().map_err(to_py)?;
    let cfg = config.inner.clone();
    let outcome = py.detach(move || core_run_stage(&cfg, stage, force)).map_err(to_py)?;
    Ok(outcome_str(outcome))
}

#[pyfunction]
#[pyo3(signature = (config, force = false))]
fn run_all(py: Python<'_>, config: &PyConfig, force: bool) -> PyResult<Vec<(String, &'static str)>> {
    let cfg = config.inner.clone();
    let out = py.detach(move || core_run_all(&cfg, force)).map_err(to_py)?;
    Ok(out.into_iter().map(|(s, o)| (s.to_string(), outcome_str(o))).collect())
}

#[pyfunction]
fn stages() -> Vec<&'static str> {
    Stage::ALL.iter().map(|s| s.as_str()).collect()
}

/// Saved classifier, generator and fused regressor with normalization.
#[pyclass(name = "Bundle", module = "aps_py")]
struct PyBundle {
    inner: ModelBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ModelBundle::load(&dir).map_err(to_py)?,
        })
    }

    #[getter]
    fn scene_count(&self) -> usize {
        self.inner.scene_count()
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.input_size()
    }

    /// Localizes a PNG file. With `scene_id`, decodes the position in that
    /// scene instead of the predicted one.
    #[pyo3(signature = (path, scene_id = None))]
    fn localize<'py>(&self, py: Python<'py>, path: PathBuf, scene_id: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
        let image = CoreImage::load_png(&path).map_err(to_py)?;
        let r = match scene_id {
            Some(s) => localize_with_scene(&image, &self.inner, s),
            None => localize(&image, &self.inner),
        }
        .map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("scene_id", r.scene_id)?;
        d.set_item("confidence", r.confidence)?;
        d.set_item("position", r.position)?;
        d.set_item("quaternion", r.quaternion)?;
        d.set_item("low_confidence", r.low_confidence)?;
        d.set_item("latency_ms", r.latency.as_secs_f64() * 1e3)?;
        Ok(d)
    }
}

#[pymodule]
fn aps_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ApsError", m.py().get_type::<ApsError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DependencyError", m.py().get_type::<DependencyError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize, m)?)?;
    m.add_function(wrap_pyfunction!(pose_loss, m)?)?;
    m.add_function(wrap_pyfunction!(quat_angle_deg, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(stages, m)?)?;
    Ok(())
}
