use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qsmooth::correlation::{tau_grid, two_time_correlator as correlator, CorrelatorConfig};
use qsmooth::experiment::{self, ExperimentConfig};
use qsmooth::rng::{stream, Domain};
use qsmooth::{BlochVector, MeasurementRecord, SamplerOptions, Setup};

fn to_py(e: qsmooth::Error) -> PyErr {
    if e.is_config_error()
        || matches!(
            e,
            qsmooth::Error::BlochOutOfRange(_)
                | qsmooth::Error::InvalidParams(_)
                | qsmooth::Error::InvalidOutcome { .. }
                | qsmooth::Error::RecordMismatch(_)
                | qsmooth::Error::TooManySteps(_)
                | qsmooth::Error::EnumerationSetup
        )
    {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn setup(s: &str) -> PyResult<Setup> {
    s.parse().map_err(to_py)
}

type Bloch = (f64, f64, f64);

fn bloch_list(states: &[qsmooth::QubitState]) -> Vec<Bloch> {
    states
        .iter()
        .map(|s| {
            let b = s.bloch();
            (b.x, b.y, b.z)
        })
        .collect()
}

/// A qubit density matrix.
#[pyclass(name = "QubitState", frozen, from_py_object)]
#[derive(Clone)]
struct PyQubitState {
    inner: qsmooth::QubitState,
}

#[pymethods]
impl PyQubitState {
    #[new]
    fn new(x: f64, y: f64, z: f64) -> PyResult<Self> {
        let inner = qsmooth::QubitState::from_bloch(BlochVector::new(x, y, z)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn ground() -> Self {
        Self {
            inner: qsmooth::QubitState::ground(),
        }
    }

    #[staticmethod]
    fn excited() -> Self {
        Self {
            inner: qsmooth::QubitState::excited(),
        }
    }

    fn bloch(&self) -> Bloch {
        let b = self.inner.bloch();
        (b.x, b.y, b.z)
    }

    fn purity(&self) -> f64 {
        qsmooth::purity(&self.inner)
    }

    fn fidelity(&self, other: &PyQubitState) -> f64 {
        qsmooth::fidelity(&self.inner, &other.inner)
    }

    fn trsd(&self, other: &PyQubitState) -> f64 {
        qsmooth::trsd(&self.inner, &other.inner)
    }

    /// Row-major matrix elements as complex numbers.
    fn matrix(&self) -> Vec<Vec<num_complex::Complex64>> {
        let m = self.inner.matrix();
        (0..2)
            .map(|i| (0..2).map(|j| m[(i, j)]).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        let b = self.inner.bloch();
        format!("QubitState(x={}, y={}, z={})", b.x, b.y, b.z)
    }
}

/// Decay rate, Rabi frequency, time step and horizon.
#[pyclass(name = "ModelParams", frozen, from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: qsmooth::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (gamma=1.0, omega=5.0, dt=1e-3, t_f=8.0))]
    fn new(gamma: f64, omega: f64, dt: f64, t_f: f64) -> PyResult<Self> {
        let inner = qsmooth::ModelParams {
            gamma,
            omega,
            dt,
            t_i: 0.0,
            t_f,
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ModelParams(gamma={}, omega={}, dt={}, t_f={})",
            p.gamma, p.omega, p.dt, p.t_f
        )
    }
}

#[pyclass(name = "TrueTrajectory", frozen)]
struct PyTrueTrajectory {
    #[pyo3(get)]
    times: Vec<f64>,
    #[pyo3(get)]
    bloch: Vec<Bloch>,
    #[pyo3(get)]
    record_o: Vec<f64>,
    #[pyo3(get)]
    record_v: Vec<f64>,
}

fn initial(rho0: Option<PyQubitState>) -> qsmooth::QubitState {
    rho0.map_or_else(qsmooth::QubitState::ground, |s| s.inner)
}

#[pyfunction]
#[pyo3(signature = (d_o, d_v, params, seed, stride=1, rho0=None))]
fn generate_true_trajectory(
    d_o: &str,
    d_v: &str,
    params: &PyModelParams,
    seed: u64,
    stride: usize,
    rho0: Option<PyQubitState>,
) -> PyResult<PyTrueTrajectory> {
    let mut rng = stream(seed, Domain::Python, 0, 0);
    let t = qsmooth::generate_true_trajectory(
        setup(d_o)?,
        setup(d_v)?,
        &initial(rho0),
        &params.inner,
        stride,
        seed,
        &mut rng,
    )
    .map_err(to_py)?;
    Ok(PyTrueTrajectory {
        times: t.grid.times(),
        bloch: bloch_list(&t.states),
        record_o: t.record_o.outcomes,
        record_v: t.record_v.outcomes,
    })
}

fn record(d_o: &str, outcomes: Vec<f64>, p: &qsmooth::ModelParams) -> PyResult<MeasurementRecord> {
    MeasurementRecord::new(setup(d_o)?, p.dt, outcomes).map_err(to_py)
}

/// Filtered Bloch vectors of an observed record.
#[pyfunction]
#[pyo3(signature = (d_o, outcomes, params, stride=1, rho0=None))]
fn filter(
    d_o: &str,
    outcomes: Vec<f64>,
    params: &PyModelParams,
    stride: usize,
    rho0: Option<PyQubitState>,
) -> PyResult<Vec<Bloch>> {
    let rec = record(d_o, outcomes, &params.inner)?;
    let states = qsmooth::filter(&rec, &initial(rho0), &params.inner, stride).map_err(to_py)?;
    Ok(bloch_list(&states))
}

/// Smoothed Bloch vectors and effective sample sizes under the assumed setup `d_u`.
#[pyfunction]
#[pyo3(signature = (d_o, outcomes, d_u, params, n_samples=1000, stride=1, seed=0, rho0=None))]
#[allow(clippy::too_many_arguments)]
fn smooth(
    py: Python<'_>,
    d_o: &str,
    outcomes: Vec<f64>,
    d_u: &str,
    params: &PyModelParams,
    n_samples: usize,
    stride: usize,
    seed: u64,
    rho0: Option<PyQubitState>,
) -> PyResult<(Vec<Bloch>, Vec<f64>)> {
    let rec = record(d_o, outcomes, &params.inner)?;
    let d_u = setup(d_u)?;
    let rho0 = initial(rho0);
    let p = params.inner;
    let opts = SamplerOptions {
        n_samples,
        stride,
        ..SamplerOptions::default()
    };
    let s = py
        .detach(|| {
            let mut rng = stream(seed, Domain::Python, 1, 0);
            qsmooth::smooth(&rec, d_u, &rho0, &p, &opts, &mut rng)
        })
        .map_err(to_py)?;
    Ok((bloch_list(&s.states), s.ess))
}

/// Exact smoothed states for a short record with photon-counting unobserved channel.
#[pyfunction]
#[pyo3(signature = (d_o, outcomes, params, rho0=None))]
fn brute_force_smooth(
    d_o: &str,
    outcomes: Vec<f64>,
    params: &PyModelParams,
    rho0: Option<PyQubitState>,
) -> PyResult<Vec<Bloch>> {
    let rec = record(d_o, outcomes, &params.inner)?;
    let states = qsmooth::brute_force_smooth(&rec, Setup::N, &initial(rho0), &params.inner)
        .map_err(to_py)?;
    Ok(bloch_list(&states))
}

/// Normalised two-time correlator; returns `(tau, value, stderr)`.
#[pyfunction]
#[pyo3(signature = (d_o, d_u, params, n_trajectories, seed=0, tau_max=2.0, bin_width=0.1, window=None))]
#[allow(clippy::too_many_arguments)]
fn two_time_correlator(
    py: Python<'_>,
    d_o: &str,
    d_u: &str,
    params: &PyModelParams,
    n_trajectories: usize,
    seed: u64,
    tau_max: f64,
    bin_width: f64,
    window: Option<(f64, f64)>,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut cfg = CorrelatorConfig::new(params.inner, n_trajectories, seed);
    cfg.bin_width = bin_width;
    if let Some(w) = window {
        cfg.window = w;
    }
    let (d_o, d_u) = (setup(d_o)?, setup(d_u)?);
    let taus = tau_grid(tau_max, bin_width);
    let s = py
        .detach(|| correlator(d_o, d_u, &cfg, &taus))
        .map_err(to_py)?;
    Ok((s.tau, s.value, s.stderr))
}

/// Runs a full experiment from a JSON config and returns the report as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let out = py.detach(|| experiment::run(&cfg)).map_err(to_py)?;
    serde_json::to_string(&out.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Projected cost of the run described by a JSON config, as JSON.
#[pyfunction]
fn estimate(config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    let cost = cfg.estimate().map_err(to_py)?;
    serde_json::to_string(&cost).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pyqsmooth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQubitState>()?;
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyTrueTrajectory>()?;
    m.add_function(wrap_pyfunction!(generate_true_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(filter, m)?)?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(two_time_correlator, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    Ok(())
}
