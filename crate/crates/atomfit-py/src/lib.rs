//! Python bindings for the core absorption-image types and operations:
//! frames, OD maps, Gaussian parameters, the simulator, both
//! least-squares fitters, and trained regressor models.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use atomfit::cnn;
use atomfit::imaging::{self, DEFAULT_T_FLOOR};
use atomfit::lsfit::{fit_2d, fit_3x1d, FitConfig};
use atomfit::simulator;

fn err(e: atomfit::Error) -> PyErr {
    match e {
        atomfit::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// One 16-bit camera frame.
#[pyclass(name = "Frame", from_py_object)]
#[derive(Clone)]
struct PyFrame {
    inner: imaging::Frame,
}

#[pymethods]
impl PyFrame {
    #[new]
    fn new(width: usize, height: usize, counts: Vec<u16>) -> PyResult<Self> {
        Ok(Self { inner: imaging::Frame::new(width, height, counts).map_err(err)? })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, value: u16) -> PyResult<Self> {
        Ok(Self { inner: imaging::Frame::filled(width, height, value).map_err(err)? })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    /// Row-major counts, top row first.
    fn counts(&self) -> Vec<u16> {
        self.inner.counts().to_vec()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<u16> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.inner.get(x, y))
    }

    fn __repr__(&self) -> String {
        format!("Frame({}x{})", self.inner.width(), self.inner.height())
    }
}

/// The 7 Gaussian cloud parameters.
#[pyclass(name = "GaussianParams", from_py_object)]
#[derive(Clone)]
struct PyGaussianParams {
    inner: imaging::GaussianParams,
}

#[pymethods]
impl PyGaussianParams {
    #[new]
    fn new(
        x0: f64,
        y0: f64,
        sigma_x: f64,
        sigma_y: f64,
        rho: f64,
        b: f64,
        theta: f64,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: imaging::GaussianParams::new(x0, y0, sigma_x, sigma_y, rho, b, theta)
                .map_err(err)?,
        })
    }

    #[getter]
    fn x0(&self) -> f64 {
        self.inner.x0
    }
    #[getter]
    fn y0(&self) -> f64 {
        self.inner.y0
    }
    #[getter]
    fn sigma_x(&self) -> f64 {
        self.inner.sigma_x
    }
    #[getter]
    fn sigma_y(&self) -> f64 {
        self.inner.sigma_y
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }
    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    /// `[x0, y0, sigma_x, sigma_y, rho, b, theta]`.
    fn as_list(&self) -> Vec<f64> {
        self.inner.to_array().to_vec()
    }

    /// Equivalent form with theta in [-pi/4, pi/4).
    fn canonical(&self) -> Self {
        Self { inner: imaging::canonicalize(&self.inner) }
    }

    /// Model OD at a point.
    fn od_at(&self, x: f64, y: f64) -> f64 {
        self.inner.od_at(x, y)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "GaussianParams(x0={:.4}, y0={:.4}, sigma_x={:.4}, sigma_y={:.4}, rho={:.4}, b={:.4}, theta={:.4})",
            p.x0, p.y0, p.sigma_x, p.sigma_y, p.rho, p.b, p.theta
        )
    }
}

/// Optical-density map with per-pixel validity.
#[pyclass(name = "ODMap", from_py_object)]
#[derive(Clone)]
struct PyODMap {
    inner: imaging::ODMap,
}

#[pymethods]
impl PyODMap {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<f64> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.inner.get(x, y))
    }

    fn __repr__(&self) -> String {
        format!(
            "ODMap({}x{}, {} valid)",
            self.inner.width(),
            self.inner.height(),
            self.inner.valid_count()
        )
    }
}

/// Fit outcome: canonical parameters plus solver diagnostics.
#[pyclass(name = "FitResult")]
struct PyFitResult {
    #[pyo3(get)]
    params: PyGaussianParams,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    residual_ss: f64,
    #[pyo3(get)]
    elapsed_s: f64,
}

/// A trained CNN regressor loaded from disk.
#[pyclass(name = "Model")]
struct PyModel {
    inner: cnn::RegressorModel,
}

#[pymethods]
impl PyModel {
    /// Number of input frames the model expects (1 or 3).
    #[getter]
    fn input_channels(&self) -> usize {
        self.inner.spec.input_channels
    }

    #[getter]
    fn weight_count(&self) -> usize {
        self.inner.weights.len()
    }

    /// Run the regressor on `[atoms]` or `[atoms, bg, dark]`.
    fn predict(&self, frames: Vec<PyFrame>) -> PyResult<PyGaussianParams> {
        let refs: Vec<&imaging::Frame> = frames.iter().map(|f| &f.inner).collect();
        Ok(PyGaussianParams { inner: cnn::forward(&self.inner, &refs).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(channels={}, weights={})",
            self.inner.spec.input_channels,
            self.inner.weights.len()
        )
    }
}

/// OD = -ln((atoms - dark) / (bg - dark)), with saturated pixels clamped
/// and unusable pixels flagged invalid.
#[pyfunction]
fn od_from_triple(atoms: &PyFrame, bg: &PyFrame, dark: &PyFrame) -> PyResult<PyODMap> {
    let triple = imaging::FrameTriple::new(
        atoms.inner.clone(),
        bg.inner.clone(),
        dark.inner.clone(),
    )
    .map_err(err)?;
    Ok(PyODMap { inner: imaging::od_from_triple(&triple, DEFAULT_T_FLOOR).map_err(err)? })
}

/// Noiseless model OD surface on a width x height grid.
#[pyfunction]
fn gaussian_od(params: &PyGaussianParams, width: usize, height: usize) -> PyResult<PyODMap> {
    Ok(PyODMap { inner: imaging::gaussian_od(&params.inner, width, height).map_err(err)? })
}

/// Synthesize the atoms frame a camera would record for `truth` over the
/// given background pair.
#[pyfunction]
fn synthesize_atoms(
    truth: &PyGaussianParams,
    bg: &PyFrame,
    dark: &PyFrame,
) -> PyResult<PyFrame> {
    Ok(PyFrame {
        inner: simulator::synthesize_atoms(&truth.inner, &bg.inner, &dark.inner).map_err(err)?,
    })
}

/// Generate a synthetic background library; returns `[(bg, dark), ...]`.
#[pyfunction]
fn synth_background_library(
    width: usize,
    height: usize,
    entries: usize,
    seed: u64,
) -> PyResult<Vec<(PyFrame, PyFrame)>> {
    let lib = simulator::synth_library(
        &simulator::SynthBackgroundConfig::default(),
        width,
        height,
        entries,
        seed,
    )
    .map_err(err)?;
    Ok(lib
        .entries()
        .iter()
        .map(|(bg, dark)| (PyFrame { inner: bg.clone() }, PyFrame { inner: dark.clone() }))
        .collect())
}

/// Draw one ground-truth parameter vector from the default ranges.
#[pyfunction]
fn sample_params(width: usize, height: usize, seed: u64) -> PyResult<PyGaussianParams> {
    let ranges = simulator::ParamRanges::default();
    Ok(PyGaussianParams {
        inner: simulator::sample_params(&ranges, width, height, seed).map_err(err)?,
    })
}

fn to_py_fit(r: atomfit::lsfit::FitResult) -> PyFitResult {
    PyFitResult {
        params: PyGaussianParams { inner: r.params },
        converged: r.converged,
        iterations: r.iterations,
        residual_ss: r.residual_ss,
        elapsed_s: r.elapsed.as_secs_f64(),
    }
}

/// Full 7-parameter rotated-Gaussian fit (Levenberg-Marquardt).
#[pyfunction]
fn fit_gaussian_2d(od: &PyODMap) -> PyResult<PyFitResult> {
    Ok(to_py_fit(fit_2d(&od.inner, &FitConfig::default(), None).map_err(err)?))
}

/// Fast axis-aligned estimate from three alternating 1-D slice fits.
#[pyfunction]
fn fit_gaussian_3x1d(od: &PyODMap) -> PyResult<PyFitResult> {
    Ok(to_py_fit(fit_3x1d(&od.inner, &FitConfig::default()).map_err(err)?))
}

/// Reduced chi-square of parameters against an OD map, with the noise
/// variance estimated from the fit residuals.
#[pyfunction]
fn reduced_chi_square(od: &PyODMap, params: &PyGaussianParams) -> PyResult<f64> {
    Ok(atomfit::evaluate::chi_square(&od.inner, &params.inner).map_err(err)?.reduced())
}

/// Load a trained model (JSON manifest + weight blob).
#[pyfunction]
fn load_model(path: PathBuf) -> PyResult<PyModel> {
    Ok(PyModel { inner: atomfit::io::load_model(&path).map_err(err)? })
}

#[pyfunction]
fn read_frame(path: PathBuf) -> PyResult<PyFrame> {
    Ok(PyFrame { inner: atomfit::io::read_frame(&path).map_err(err)? })
}

#[pyfunction]
fn write_frame(path: PathBuf, frame: &PyFrame) -> PyResult<()> {
    atomfit::io::write_frame(&path, &frame.inner).map_err(err)
}

#[pymodule]
fn atomfit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyGaussianParams>()?;
    m.add_class::<PyODMap>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(od_from_triple, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_od, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_atoms, m)?)?;
    m.add_function(wrap_pyfunction!(synth_background_library, m)?)?;
    m.add_function(wrap_pyfunction!(sample_params, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gaussian_2d, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gaussian_3x1d, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_chi_square, m)?)?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(read_frame, m)?)?;
    m.add_function(wrap_pyfunction!(write_frame, m)?)?;
    Ok(())
}
