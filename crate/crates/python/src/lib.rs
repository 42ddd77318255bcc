//! Python bindings for the measurement model, the setup circuit and the
//! Monte Carlo experiment.

use bae_qnd_sim::error::Error;
use bae_qnd_sim::fock::{make_grid, FockState, GridKind, QuadratureGrid};
use bae_qnd_sim::jump_stats::{self, ExactValues};
use bae_qnd_sim::measurement;
use bae_qnd_sim::setup;
use pyo3::exceptions::{PyArithmeticError, PyOverflowError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

const DEFAULT_COUNT: usize = 2001;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::TruncationOverflow { .. } => PyOverflowError::new_err(err.to_string()),
        Error::InvalidDimension { .. }
        | Error::DimensionMismatch { .. }
        | Error::InvalidParameter(_)
        | Error::OutOfRange { .. } => PyValueError::new_err(err.to_string()),
        _ => PyArithmeticError::new_err(err.to_string()),
    }
}

fn state_of(amplitudes: Option<Vec<f64>>, number: usize, dim: usize) -> PyResult<FockState> {
    match amplitudes {
        Some(a) => {
            let mut padded = a;
            if padded.len() > dim {
                return Err(PyValueError::new_err(format!(
                    "{} amplitudes do not fit in dimension {dim}",
                    padded.len()
                )));
            }
            padded.resize(dim, 0.0);
            FockState::from_real(&padded).and_then(|s| s.normalized()).map_err(to_py)
        }
        None => FockState::number(number, dim).map_err(to_py),
    }
}

fn uniform_grid(span: f64, count: usize) -> PyResult<QuadratureGrid> {
    make_grid(GridKind::Uniform, span, count).map_err(to_py)
}

fn default_span(delta_x: f64) -> f64 {
    6.0 * (delta_x * delta_x + 1.0).sqrt()
}

/// Measurement operator of resolution `delta_x` on a `dim`-level Fock space.
#[pyclass(frozen, name = "MeasurementModel")]
struct PyMeasurementModel {
    inner: measurement::MeasurementModel,
}

#[pymethods]
impl PyMeasurementModel {
    #[new]
    fn new(delta_x: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: measurement::MeasurementModel::new(delta_x, dim).map_err(to_py)?,
        })
    }

    #[getter]
    fn delta_x(&self) -> f64 {
        self.inner.delta_x()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn vacuum_outcome_variance(&self) -> f64 {
        self.inner.vacuum_outcome_variance()
    }

    fn completeness_span(&self) -> f64 {
        self.inner.completeness_span()
    }

    /// Real matrix elements of the measurement operator at outcome `x_m`.
    fn matrix(&self, x_m: f64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.measurement_matrix(x_m).map_err(to_py)?;
        Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    #[pyo3(signature = (x_m, number = 0, amplitudes = None))]
    fn outcome_density(&self, x_m: f64, number: usize, amplitudes: Option<Vec<f64>>) -> PyResult<f64> {
        let state = state_of(amplitudes, number, self.inner.dim())?;
        self.inner.outcome_density(&state, x_m).map_err(to_py)
    }

    #[pyo3(signature = (x_m, number = 0, amplitudes = None))]
    fn joint_photon_densities(
        &self,
        x_m: f64,
        number: usize,
        amplitudes: Option<Vec<f64>>,
    ) -> PyResult<Vec<f64>> {
        let state = state_of(amplitudes, number, self.inner.dim())?;
        self.inner.joint_photon_densities(&state, x_m).map_err(to_py)
    }

    /// Photon-number probabilities of the conditional output state.
    #[pyo3(signature = (x_m, number = 0, amplitudes = None))]
    fn conditional_probabilities(
        &self,
        x_m: f64,
        number: usize,
        amplitudes: Option<Vec<f64>>,
    ) -> PyResult<Vec<f64>> {
        let state = state_of(amplitudes, number, self.inner.dim())?;
        let out = self.inner.conditional_state(&state, x_m).map_err(to_py)?;
        Ok(out.amplitudes().iter().map(|c| c.norm_sqr()).collect())
    }

    #[pyo3(signature = (span = None, count = DEFAULT_COUNT))]
    fn completeness_defect(&self, py: Python<'_>, span: Option<f64>, count: usize) -> PyResult<f64> {
        let grid = uniform_grid(span.unwrap_or(self.inner.completeness_span()), count)?;
        py.detach(|| self.inner.completeness_defect(&grid)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("MeasurementModel(delta_x={}, dim={})", self.inner.delta_x(), self.inner.dim())
    }
}

/// Parameters of the beam-splitter and squeezer circuit.
#[pyclass(frozen, name = "SetupParams")]
struct PySetupParams {
    inner: setup::SetupParams,
}

#[pymethods]
impl PySetupParams {
    #[new]
    #[pyo3(signature = (gain_a, dim = 40))]
    fn new(gain_a: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: setup::SetupParams::new(gain_a, dim, dim).map_err(to_py)?,
        })
    }

    #[getter]
    fn gain_a(&self) -> f64 {
        self.inner.gain_a()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim_signal()
    }

    #[getter]
    fn reflectivity(&self) -> f64 {
        self.inner.reflectivity()
    }

    #[getter]
    fn delta_x(&self) -> f64 {
        self.inner.delta_x()
    }

    #[getter]
    fn nominal_scale(&self) -> f64 {
        self.inner.nominal_scale()
    }

    /// Compares the circuit with the measurement operator for input `|number⟩`.
    #[pyo3(signature = (number = 0))]
    fn equivalence<'py>(&self, py: Python<'py>, number: usize) -> PyResult<Bound<'py, PyDict>> {
        let params = self.inner;
        let (map, report) = py
            .detach(|| -> Result<_, Error> {
                let sim = setup::SetupSimulator::new(params)?;
                let state = FockState::number(number, params.dim_signal())?;
                let grid = sim.default_grid(&state)?;
                Ok((sim.outcome_map(), sim.equivalence_report(&state, &grid)?))
            })
            .map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("scale", map.scale)?;
        d.set_item("calibration_residual", map.residual)?;
        d.set_item("defect", report.defect)?;
        d.set_item("max_density_error", report.max_density_error)?;
        d.set_item("max_trace_distance", report.max_trace_distance)?;
        d.set_item("outcomes_checked", report.outcomes_checked)?;
        d.set_item("max_top_occupation", report.max_top_occupation)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("SetupParams(gain_a={}, dim={})", self.inner.gain_a(), self.inner.dim_signal())
    }
}

#[pyfunction]
fn trusted_dim(dim: usize) -> usize {
    bae_qnd_sim::fock::trusted_dim(dim)
}

#[pyfunction]
fn asymptotic_p1(delta_x: f64, x_m: f64) -> PyResult<f64> {
    measurement::asymptotic_p1(delta_x, x_m).map_err(to_py)
}

/// Probability that a vacuum input leaves the measurement with photons.
#[pyfunction]
#[pyo3(signature = (delta_x, dim = 32, span = None, count = DEFAULT_COUNT))]
fn jump_probability(py: Python<'_>, delta_x: f64, dim: usize, span: Option<f64>, count: usize) -> PyResult<f64> {
    let grid = uniform_grid(span.unwrap_or(default_span(delta_x)), count)?;
    py.detach(|| {
        let model = measurement::MeasurementModel::new(delta_x, dim)?;
        jump_stats::jump_probability(&FockState::vacuum(dim)?, &model, &grid)
    })
    .map_err(to_py)
}

/// Symmetrized operator correlation of `x²` and `n` for `|number⟩`.
#[pyfunction]
#[pyo3(signature = (number = 0, dim = 16))]
fn operator_correlation(number: usize, dim: usize) -> PyResult<f64> {
    let state = FockState::number(number, dim).map_err(to_py)?;
    jump_stats::operator_correlation(&state, dim).map(|c| c.value).map_err(to_py)
}

fn exact_dict<'py>(py: Python<'py>, e: &ExactValues) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("delta_x", e.delta_x)?;
    d.set_item("reference_n", e.reference_n)?;
    d.set_item("jump_probability", e.jump_probability)?;
    d.set_item("exact_c_integral", e.exact_c_integral)?;
    d.set_item("exact_covariance", e.exact_covariance)?;
    d.set_item("operator_c", e.operator_c)?;
    Ok(d)
}

/// Deterministic vacuum-input quantities at resolution `delta_x`.
#[pyfunction]
#[pyo3(signature = (delta_x, dim = 32, span = None, count = DEFAULT_COUNT))]
fn exact_values<'py>(
    py: Python<'py>,
    delta_x: f64,
    dim: usize,
    span: Option<f64>,
    count: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = uniform_grid(span.unwrap_or(default_span(delta_x)), count)?;
    let exact = py
        .detach(|| {
            let model = measurement::MeasurementModel::new(delta_x, dim)?;
            ExactValues::compute(&FockState::vacuum(dim)?, &model, &grid)
        })
        .map_err(to_py)?;
    exact_dict(py, &exact)
}

/// Monte Carlo run on vacuum input: returns the outcome and photon-number
/// columns together with the summary statistics.
#[pyfunction]
#[pyo3(signature = (delta_x, shots, seed, dim = 32))]
fn simulate<'py>(py: Python<'py>, delta_x: f64, shots: u64, seed: u64, dim: usize) -> PyResult<Bound<'py, PyDict>> {
    let grid = uniform_grid(default_span(delta_x), DEFAULT_COUNT)?;
    let (records, report) = py
        .detach(|| {
            let model = measurement::MeasurementModel::new(delta_x, dim)?;
            let vacuum = FockState::vacuum(dim)?;
            let exact = ExactValues::compute(&vacuum, &model, &grid)?;
            let records = jump_stats::run_experiment(&vacuum, &model, shots, seed)?;
            let report = jump_stats::summarize(&records, &exact)?;
            Ok::<_, Error>((records, report))
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("x_m", records.iter().map(|r| r.x_m).collect::<Vec<_>>())?;
    d.set_item("photon_n", records.iter().map(|r| r.photon_n).collect::<Vec<_>>())?;
    d.set_item("jump_fraction", (report.jump_fraction.value, report.jump_fraction.standard_error))?;
    d.set_item("measured_c", (report.measured_c.value, report.measured_c.standard_error))?;
    d.set_item("covariance_c", (report.covariance_c.value, report.covariance_c.standard_error))?;
    d.set_item("exact", exact_dict(py, &report.exact)?)?;
    Ok(d)
}

#[pymodule]
fn bae_qnd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMeasurementModel>()?;
    m.add_class::<PySetupParams>()?;
    m.add_function(wrap_pyfunction!(trusted_dim, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_p1, m)?)?;
    m.add_function(wrap_pyfunction!(jump_probability, m)?)?;
    m.add_function(wrap_pyfunction!(operator_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(exact_values, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
