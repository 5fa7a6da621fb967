//! Python bindings: rendering, demodulation, unwrapping, datasets and networks.

use std::path::PathBuf;

use phaseforge::config::RunConfig;
use phaseforge::dataset::{build_dataset, Dataset, Split};
use phaseforge::fringe::{self, AbsolutePhaseMap, FringeImage, FringeSet, PhaseMap, RenderParams, SystemGeometry};
use phaseforge::metrics::evaluate_fringes;
use phaseforge::nn::{build_network, infer, train, Network, Variant, VariantKind};
use phaseforge::pipeline::{classical_retrieve, load_model, save_model};
use phaseforge::surface::{generate_surface, Surface, SurfaceGenConfig};
use phaseforge::Error;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for phaseforge::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

#[pyclass(name = "RenderParams", skip_from_py_object)]
#[derive(Clone)]
struct PyRenderParams {
    inner: RenderParams,
}

#[pymethods]
impl PyRenderParams {
    #[new]
    #[pyo3(signature = (background=None, modulation=None, phase_constant=None, carrier_enabled=false))]
    fn new(
        background: Option<f64>,
        modulation: Option<f64>,
        phase_constant: Option<f64>,
        carrier_enabled: bool,
    ) -> PyResult<Self> {
        let d = RenderParams::default();
        let inner = RenderParams {
            background: background.unwrap_or(d.background),
            modulation: modulation.unwrap_or(d.modulation),
            phase_constant: phase_constant.unwrap_or(d.phase_constant),
            carrier_enabled,
        };
        inner.validate().py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn background(&self) -> f64 {
        self.inner.background
    }

    #[getter]
    fn modulation(&self) -> f64 {
        self.inner.modulation
    }

    #[getter]
    fn phase_constant(&self) -> f64 {
        self.inner.phase_constant
    }

    #[getter]
    fn carrier_enabled(&self) -> bool {
        self.inner.carrier_enabled
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn render_or_default(render: Option<PyRef<'_, PyRenderParams>>) -> RenderParams {
    render.map(|r| r.inner).unwrap_or_default()
}

#[pyclass(name = "Surface", skip_from_py_object)]
struct PySurface {
    inner: Surface,
}

#[pymethods]
impl PySurface {
    #[new]
    fn new(width: usize, height: usize, depth: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: Surface::from_depth(width, height, depth).py()?,
        })
    }

    /// Random smooth surface rescaled into `depth_range`.
    #[staticmethod]
    #[pyo3(signature = (seed, width=64, height=64, depth_range=(0.0, std::f64::consts::TAU)))]
    fn generate(seed: u64, width: usize, height: usize, depth_range: (f64, f64)) -> PyResult<Self> {
        let config = SurfaceGenConfig {
            seed,
            width,
            height,
            depth_range,
            ..SurfaceGenConfig::default()
        };
        Ok(Self {
            inner: generate_surface(&config).py()?,
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

    /// Row-major depths.
    #[getter]
    fn depth(&self) -> Vec<f64> {
        self.inner.depth().to_vec()
    }
}

#[pyclass(name = "FringeSet", skip_from_py_object)]
struct PyFringeSet {
    inner: FringeSet,
}

#[pymethods]
impl PyFringeSet {
    /// `images` holds `N` row-major intensity lists in `[0, 1]`.
    #[new]
    fn new(frequency: f64, width: usize, height: usize, images: Vec<Vec<f64>>) -> PyResult<Self> {
        let images = images
            .into_iter()
            .map(|data| FringeImage::new(width, height, data))
            .collect::<phaseforge::Result<Vec<_>>>()
            .py()?;
        Ok(Self {
            inner: FringeSet::new(frequency, images).py()?,
        })
    }

    #[getter]
    fn frequency(&self) -> f64 {
        self.inner.frequency()
    }

    #[getter]
    fn phase_steps(&self) -> usize {
        self.inner.phase_steps()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn images(&self) -> Vec<Vec<f64>> {
        self.inner.images().iter().map(|im| im.data().to_vec()).collect()
    }
}

#[pyclass(name = "PhaseMap", skip_from_py_object)]
struct PyPhaseMap {
    inner: PhaseMap,
}

#[pymethods]
impl PyPhaseMap {
    /// Non-finite entries are treated as masked.
    #[new]
    fn new(width: usize, height: usize, frequency: f64, phase: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: PhaseMap::from_phase(width, height, frequency, phase).py()?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn frequency(&self) -> f64 {
        self.inner.frequency
    }

    /// Wrapped phase in `(-π, π]`; NaN where masked.
    #[getter]
    fn phase(&self) -> Vec<f64> {
        self.inner.phase.clone()
    }

    #[getter]
    fn valid(&self) -> Vec<bool> {
        self.inner.valid.clone()
    }
}

#[pyclass(name = "AbsolutePhaseMap", skip_from_py_object)]
struct PyAbsolutePhaseMap {
    inner: AbsolutePhaseMap,
}

#[pymethods]
impl PyAbsolutePhaseMap {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn frequency(&self) -> f64 {
        self.inner.frequency
    }

    #[getter]
    fn phase(&self) -> Vec<f64> {
        self.inner.phase.clone()
    }

    #[getter]
    fn order(&self) -> Vec<i64> {
        self.inner.order.clone()
    }

    #[getter]
    fn valid(&self) -> Vec<bool> {
        self.inner.valid.clone()
    }
}

#[pyfunction]
fn wrap(phase: f64) -> f64 {
    fringe::wrap(phase)
}

#[pyfunction]
#[pyo3(signature = (surface, frequency, phase_steps, render=None))]
fn render_set(
    surface: PyRef<'_, PySurface>,
    frequency: f64,
    phase_steps: usize,
    render: Option<PyRef<'_, PyRenderParams>>,
) -> PyResult<PyFringeSet> {
    let inner = fringe::render_set(&surface.inner, frequency, phase_steps, &render_or_default(render)).py()?;
    Ok(PyFringeSet { inner })
}

#[pyfunction]
#[pyo3(signature = (fringes, modulation_threshold=fringe::DEFAULT_MODULATION_THRESHOLD))]
fn wrapped_phase(fringes: PyRef<'_, PyFringeSet>, modulation_threshold: f64) -> PyPhaseMap {
    PyPhaseMap {
        inner: fringe::wrapped_phase(&fringes.inner, modulation_threshold),
    }
}

/// Unwraps maps ordered lowest frequency first; the first is taken as absolute.
#[pyfunction]
fn unwrap_ladder(maps: Vec<PyRef<'_, PyPhaseMap>>) -> PyResult<Vec<PyAbsolutePhaseMap>> {
    let maps: Vec<PhaseMap> = maps.iter().map(|m| m.inner.clone()).collect();
    Ok(fringe::unwrap_ladder(&maps)
        .py()?
        .into_iter()
        .map(|inner| PyAbsolutePhaseMap { inner })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (absolute, render=None))]
fn height_from_phase(
    absolute: PyRef<'_, PyAbsolutePhaseMap>,
    render: Option<PyRef<'_, PyRenderParams>>,
) -> PyResult<PySurface> {
    Ok(PySurface {
        inner: fringe::height_from_phase(&absolute.inner, &render_or_default(render)).py()?,
    })
}

/// Demodulate, unwrap and triangulate a ladder of fringe sets.
#[pyfunction]
#[pyo3(signature = (sets, render=None, modulation_threshold=fringe::DEFAULT_MODULATION_THRESHOLD))]
fn classical_retrieve_py(
    sets: Vec<PyRef<'_, PyFringeSet>>,
    render: Option<PyRef<'_, PyRenderParams>>,
    modulation_threshold: f64,
) -> PyResult<(PyAbsolutePhaseMap, PySurface)> {
    let sets: Vec<FringeSet> = sets.iter().map(|s| s.inner.clone()).collect();
    let r = classical_retrieve(&sets, &render_or_default(render), modulation_threshold).py()?;
    Ok((
        PyAbsolutePhaseMap {
            inner: r.output().clone(),
        },
        PySurface { inner: r.height },
    ))
}

#[pyfunction]
#[pyo3(signature = (highest_frequency, camera_to_reference=1000.0, projector_to_camera=60.0, projected_width=280.0))]
fn restricted_depth(
    highest_frequency: f64,
    camera_to_reference: f64,
    projector_to_camera: f64,
    projected_width: f64,
) -> PyResult<f64> {
    let geometry = SystemGeometry {
        camera_to_reference,
        projector_to_camera,
        projected_width,
        ..SystemGeometry::default()
    };
    fringe::restricted_depth(&geometry, highest_frequency).py()
}

#[pyfunction]
#[pyo3(signature = (highest_frequency, phase_constant=1.0 / 35.0))]
fn restricted_depth_sim(highest_frequency: f64, phase_constant: f64) -> PyResult<f64> {
    let render = RenderParams {
        phase_constant,
        ..RenderParams::default()
    };
    fringe::restricted_depth_sim(&render, highest_frequency).py()
}

/// `(delta_k, safe)` for phase errors at two adjacent doubling steps.
#[pyfunction]
fn order_error(delta_prev: f64, delta_cur: f64) -> (f64, bool) {
    let e = fringe::order_error(delta_prev, delta_cur);
    (e.delta_k, e.safe)
}

#[pyfunction]
#[pyo3(signature = (predicted, truth, modulation_threshold=fringe::DEFAULT_MODULATION_THRESHOLD))]
fn evaluate<'py>(
    py: Python<'py>,
    predicted: PyRef<'_, PyFringeSet>,
    truth: PyRef<'_, PyFringeSet>,
    modulation_threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = evaluate_fringes("python", &predicted.inner, &truth.inner, modulation_threshold).py()?;
    let d = PyDict::new(py);
    d.set_item("mean_abs_phase_error", m.mean_abs_phase_error)?;
    d.set_item("max_abs_phase_error", m.max_abs_phase_error)?;
    d.set_item("mean_grayscale_error", m.mean_grayscale_error)?;
    d.set_item("valid_pixel_count", m.valid_pixel_count)?;
    Ok(d)
}

fn parse_config(config_json: Option<&str>, variant: Option<&str>) -> PyResult<RunConfig> {
    let mut config = match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = variant {
        config.network.variant = v.parse::<VariantKind>().py()?;
    }
    config.validate().py()?;
    Ok(config)
}

/// Resolved run configuration as JSON (defaults filled in).
#[pyfunction]
#[pyo3(signature = (config_json=None))]
fn resolve_config(config_json: Option<&str>) -> PyResult<String> {
    Ok(parse_config(config_json, None)?.to_json())
}

/// Builds a dataset tree and returns its manifest checksum.
#[pyfunction]
#[pyo3(signature = (out, config_json=None, variant=None))]
fn generate_dataset(out: PathBuf, config_json: Option<&str>, variant: Option<&str>) -> PyResult<String> {
    let config = parse_config(config_json, variant)?;
    let v = config.variant().py()?;
    Ok(build_dataset(&config.dataset_spec(&v), &out).py()?.content_checksum)
}

#[pyclass(name = "Model", skip_from_py_object)]
struct PyModel {
    network: Network,
    variant: Variant,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (network, variant, _) = load_model(&path).py()?;
        Ok(Self { network, variant })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.network, &self.variant, None).py()
    }

    /// Trains the configured variant on a dataset; returns the model and per-epoch train losses.
    #[staticmethod]
    #[pyo3(signature = (data, config_json=None, variant=None))]
    fn train(data: PathBuf, config_json: Option<&str>, variant: Option<&str>) -> PyResult<(Self, Vec<f64>)> {
        let config = parse_config(config_json, variant)?;
        let variant = config.variant().py()?;
        let dataset = Dataset::open(&data).py()?;
        let train_set = dataset.samples(Split::Train, &variant).py()?;
        let validation = dataset.samples(Split::Validation, &variant).py()?;
        let spec = build_network(&variant, config.network.width_multiplier, config.train.normalization_enabled).py()?;
        let mut network = Network::new(spec, config.train.seed).py()?;
        let log = train(&mut network, &train_set, &validation, &config.train, |_, _, _| Ok(())).py()?;
        Ok((Self { network, variant }, log.iter().map(|r| r.train_loss).collect()))
    }

    #[getter]
    fn variant(&self) -> String {
        format!("{:?}", self.variant.kind)
    }

    #[getter]
    fn input_frequencies(&self) -> Vec<f64> {
        self.variant.input_frequencies.clone()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    /// Transforms row-major input fringes (one per input frequency) into output stacks.
    fn infer(&self, width: usize, height: usize, inputs: Vec<Vec<f64>>) -> PyResult<Vec<PyFringeSet>> {
        let inputs = inputs
            .into_iter()
            .map(|data| FringeImage::new(width, height, data))
            .collect::<phaseforge::Result<Vec<_>>>()
            .py()?;
        Ok(infer(&self.network, &self.variant, &inputs)
            .py()?
            .into_iter()
            .map(|inner| PyFringeSet { inner })
            .collect())
    }
}

#[pymodule]
#[pyo3(name = "phaseforge")]
fn phaseforge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRenderParams>()?;
    m.add_class::<PySurface>()?;
    m.add_class::<PyFringeSet>()?;
    m.add_class::<PyPhaseMap>()?;
    m.add_class::<PyAbsolutePhaseMap>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(wrap, m)?)?;
    m.add_function(wrap_pyfunction!(render_set, m)?)?;
    m.add_function(wrap_pyfunction!(wrapped_phase, m)?)?;
    m.add_function(wrap_pyfunction!(unwrap_ladder, m)?)?;
    m.add_function(wrap_pyfunction!(height_from_phase, m)?)?;
    m.add("classical_retrieve", wrap_pyfunction!(classical_retrieve_py, m)?)?;
    m.add_function(wrap_pyfunction!(restricted_depth, m)?)?;
    m.add_function(wrap_pyfunction!(restricted_depth_sim, m)?)?;
    m.add_function(wrap_pyfunction!(order_error, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add("DEFAULT_MODULATION_THRESHOLD", fringe::DEFAULT_MODULATION_THRESHOLD)?;
    Ok(())
}
