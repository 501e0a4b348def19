//! Python bindings: SW constants, stream perturbers, the budget ledger,
//! sampling, smoothing, metrics and the experiment harness.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ldpstream::clip;
use ldpstream::harness::{self, AlgoSpec, ExperimentConfig, PerturbSettings};
use ldpstream::ledger;
use ldpstream::mechanism::{self, MechanismKind, Randomizer, SquareWave};
use ldpstream::metrics;
use ldpstream::perturber::{self, Algorithm};
use ldpstream::sampling;
use ldpstream::smoothing::{self, SmoothingConfig};
use ldpstream::Error;

create_exception!(ldpstream_py, BudgetViolationError, PyException);
create_exception!(ldpstream_py, DatasetMissingError, PyException);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::BudgetViolation { .. } => BudgetViolationError::new_err(err.to_string()),
        Error::DatasetMissing { .. } => DatasetMissingError::new_err(err.to_string()),
        Error::Io(_) => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ldpstream::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// SW constants for one budget.
#[pyclass(frozen, get_all, skip_from_py_object, name = "MechanismParams")]
#[derive(Clone)]
struct PyParams {
    epsilon: f64,
    b: f64,
    p: f64,
    q: f64,
    mu: f64,
    sigma2: f64,
    mu4: f64,
    var_dx: f64,
}

#[pymethods]
impl PyParams {
    fn __repr__(&self) -> String {
        format!("MechanismParams(epsilon={}, b={}, p={}, q={})", self.epsilon, self.b, self.p, self.q)
    }
}

#[pyfunction]
fn sw_params(epsilon: f64) -> PyResult<PyParams> {
    let p = mechanism::sw_params(epsilon).py()?;
    let m = p.moments();
    Ok(PyParams {
        epsilon,
        b: p.b,
        p: p.p,
        q: p.q,
        mu: m.mu,
        sigma2: m.sigma2,
        mu4: m.mu4,
        var_dx: m.var_dx,
    })
}

/// `(lower, upper, t)` of the CAPP clip interval for `epsilon`.
#[pyfunction]
fn clip_bounds(epsilon: f64) -> PyResult<(f64, f64, f64)> {
    let c = clip::clip_bounds(epsilon).py()?;
    Ok((c.lower, c.upper, c.t_value))
}

/// One SW report for `x` in [0, 1].
#[pyfunction]
#[pyo3(signature = (x, epsilon, seed = 0))]
fn sw_perturb(x: f64, epsilon: f64, seed: u64) -> PyResult<f64> {
    let p = mechanism::sw_params(epsilon).py()?;
    Ok(mechanism::sw_perturb(x, &p, &mut ChaCha8Rng::seed_from_u64(seed)).py()?.value)
}

/// Stateful per-user perturber.
#[pyclass(name = "Perturber")]
struct PyPerturber {
    state: perturber::PerturberState,
    rz: SquareWave<ChaCha8Rng>,
}

#[pymethods]
impl PyPerturber {
    #[new]
    #[pyo3(signature = (algorithm, epsilon, w, seed = 0, delta = None))]
    fn new(algorithm: &str, epsilon: f64, w: usize, seed: u64, delta: Option<f64>) -> PyResult<Self> {
        let alg: Algorithm = algorithm.parse().py()?;
        let mut state = perturber::PerturberState::new(alg, epsilon, w).py()?;
        if let Some(d) = delta {
            state = state.with_bounds(clip::bounds_from_delta(d).py()?).py()?;
        }
        Ok(PyPerturber {
            state,
            rz: SquareWave::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    /// Perturbs one value; returns `(published, budget_spent)`.
    fn step(&mut self, x: f64) -> PyResult<(f64, f64)> {
        let r = self.state.step(x, &mut self.rz).py()?;
        Ok((r.perturbed, r.budget_spent))
    }

    fn run(&mut self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        let reps = self.state.run(&values, &mut self.rz).py()?;
        Ok(reps.iter().map(|r| r.perturbed).collect())
    }

    #[getter]
    fn accumulated_deviation(&self) -> f64 {
        self.state.accumulated_deviation
    }

    #[getter]
    fn per_slot_budget(&self) -> f64 {
        self.state.per_slot_budget
    }

    #[getter]
    fn bounds(&self) -> (f64, f64) {
        (self.state.bounds.lower, self.state.bounds.upper)
    }
}

#[pyclass(name = "BudgetLedger")]
struct PyLedger(ledger::BudgetLedger);

#[pymethods]
impl PyLedger {
    #[new]
    fn new(w: usize, epsilon: f64) -> PyResult<Self> {
        Ok(PyLedger(ledger::BudgetLedger::new(w, epsilon).py()?))
    }

    fn record(&mut self, slot: usize, amount: f64) -> PyResult<()> {
        self.0.record(slot, amount).py()
    }

    fn assert_w_event(&self) -> PyResult<()> {
        self.0.assert_w_event().py()
    }

    fn window_sums(&self) -> Vec<f64> {
        self.0.window_sums()
    }
}

/// Collector estimate of `values` under `algorithm` (e.g. "capp", "app-s").
#[pyfunction]
#[pyo3(signature = (algorithm, values, epsilon, w, seed = 0, smooth_window = 3))]
fn estimate(
    algorithm: &str,
    values: Vec<f64>,
    epsilon: f64,
    w: usize,
    seed: u64,
    smooth_window: usize,
) -> PyResult<Vec<f64>> {
    let algo: AlgoSpec = algorithm.parse().py()?;
    let mut s = PerturbSettings::new(epsilon, w);
    s.smoothing = SmoothingConfig::from_window(smooth_window).py()?;
    let mut rz = mechanism::randomizer(MechanismKind::SquareWave, ChaCha8Rng::seed_from_u64(seed));
    let rz: &mut dyn Randomizer = &mut *rz;
    let mut est = harness::estimate(algo, &[&values], &s, rz).py()?;
    Ok(est.remove(0))
}

#[pyfunction]
#[pyo3(signature = (interval_length, epsilon, w))]
fn select_ns(interval_length: usize, epsilon: f64, w: usize) -> PyResult<usize> {
    sampling::select_ns(interval_length, epsilon, w).py()
}

#[pyfunction]
fn var_of_sample_variance(n_s: usize, epsilon: f64) -> PyResult<f64> {
    let p = mechanism::sw_params(epsilon).py()?;
    sampling::var_of_sample_variance(n_s, &p).py()
}

#[pyfunction]
#[pyo3(signature = (values, window = 3))]
fn sma(values: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    smoothing::sma(&values, SmoothingConfig::from_window(window).py()?).py()
}

#[pyfunction]
fn mse(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::mse(&a, &b).py()
}

#[pyfunction]
fn cosine_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::cosine_distance(&a, &b).py()
}

#[pyfunction]
fn wasserstein(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::wasserstein(&a, &b).py()
}

/// Runs an experiment from `key = value` config text; returns the results CSV.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::parse(config).py()?;
    let rows = py.detach(|| harness::run_experiment(&cfg)).py()?;
    harness::results_csv(&rows).py()
}

#[pymodule]
fn ldpstream_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyPerturber>()?;
    m.add_class::<PyLedger>()?;
    m.add_function(wrap_pyfunction!(sw_params, m)?)?;
    m.add_function(wrap_pyfunction!(clip_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(sw_perturb, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(select_ns, m)?)?;
    m.add_function(wrap_pyfunction!(var_of_sample_variance, m)?)?;
    m.add_function(wrap_pyfunction!(sma, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("BudgetViolationError", m.py().get_type::<BudgetViolationError>())?;
    m.add("DatasetMissingError", m.py().get_type::<DatasetMissingError>())?;
    Ok(())
}
