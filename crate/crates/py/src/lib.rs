//! Python bindings: parameter sets, sampling, the fair oracle, the plugin
//! estimator and the fairness and lower-bound metrics.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fairreg_core as core;

fn to_py(e: core::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

#[pyclass(name = "ModelParams", module = "fairreg")]
struct PyModelParams {
    inner: core::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (beta, mu, p, sigma_x, sigma_xi, b_bound, u_bound))]
    fn new(
        beta: Vec<Vec<f64>>,
        mu: Vec<Vec<f64>>,
        p: Vec<f64>,
        sigma_x: f64,
        sigma_xi: f64,
        b_bound: f64,
        u_bound: f64,
    ) -> PyResult<Self> {
        let inner = core::ModelParams {
            d: beta.first().map_or(0, Vec::len),
            m: beta.len(),
            beta,
            mu,
            p,
            sigma_x,
            sigma_xi,
            b_bound,
            u_bound,
        };
        inner.check_shapes().map_err(to_py)?;
        Ok(PyModelParams { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModelParams { inner: core::ModelParams::from_json(text).map_err(to_py)? })
    }

    /// Admissible parameters drawn at random for a given `B` and `U`.
    #[staticmethod]
    #[pyo3(signature = (d, m, b_bound, u_bound, seed=0))]
    fn random_valid(d: usize, m: usize, b_bound: f64, u_bound: f64, seed: u64) -> PyResult<Self> {
        let spec = core::RandomValidSpec::new(b_bound, u_bound);
        Ok(PyModelParams { inner: core::random_valid_params(&spec, d, m, seed).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Names of violated constraints; empty when the parameters are admissible.
    fn violations(&self) -> Vec<String> {
        core::validate_params(&self.inner).into_iter().map(|v| v.constraint).collect()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        self.inner.beta.clone()
    }

    #[getter]
    fn mu(&self) -> Vec<Vec<f64>> {
        self.inner.mu.clone()
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.inner.p.clone()
    }

    fn __repr__(&self) -> String {
        format!("ModelParams(d={}, M={})", self.inner.d, self.inner.m)
    }
}

#[pyclass(name = "Dataset", module = "fairreg")]
struct PyDataset {
    inner: core::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(x: Vec<Vec<f64>>, s: Vec<usize>, y: Vec<f64>, m: usize) -> PyResult<Self> {
        let d = x.first().map_or(0, Vec::len);
        let flat = x.into_iter().flatten().collect();
        Ok(PyDataset { inner: core::Dataset::new(d, m, flat, s, y).map_err(to_py)? })
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.x.chunks(self.inner.d).map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn s(&self) -> Vec<usize> {
        self.inner.s.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn group_counts(&self) -> Vec<usize> {
        self.inner.group_counts.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }
}

#[pyclass(name = "Regressor", module = "fairreg")]
struct PyRegressor {
    inner: core::GroupAffineRegressor,
}

#[pymethods]
impl PyRegressor {
    #[new]
    fn new(w: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<Self> {
        Ok(PyRegressor { inner: core::GroupAffineRegressor::new(w, b).map_err(to_py)? })
    }

    fn predict(&self, x: Vec<f64>, s: usize) -> PyResult<f64> {
        self.inner.evaluate(&x, s).map_err(to_py)
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        self.inner.w.clone()
    }

    #[getter]
    fn b(&self) -> Vec<f64> {
        self.inner.b.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyfunction]
#[pyo3(signature = (params, n, seed=0))]
fn sample_dataset(params: PyRef<'_, PyModelParams>, n: usize, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset { inner: core::sample_dataset(&params.inner, n, seed).map_err(to_py)? })
}

/// The optimal fair regressor for known parameters.
#[pyfunction]
fn fair_oracle(params: PyRef<'_, PyModelParams>) -> PyResult<PyRegressor> {
    let oracle = core::build_fdp(&params.inner).map_err(to_py)?;
    Ok(PyRegressor { inner: oracle.fdp })
}

/// Fits the plugin estimator; returns the regressor and the component
/// estimates as a JSON string.
#[pyfunction]
#[pyo3(signature = (data, seed=0))]
fn fit(data: PyRef<'_, PyDataset>, seed: u64) -> PyResult<(PyRegressor, String)> {
    let ds = &data.inner;
    let (f, est) = core::fit(ds, ds.d, ds.m, seed).map_err(to_py)?;
    let json = serde_json::to_string(&est).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyRegressor { inner: f }, json))
}

#[pyfunction]
fn excess_risk(f: PyRef<'_, PyRegressor>, params: PyRef<'_, PyModelParams>) -> PyResult<f64> {
    let oracle = core::build_fdp(&params.inner).map_err(to_py)?;
    core::analytic_excess_risk(&f.inner, &oracle).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (f, params, n_mc, seed=0))]
fn mc_excess_risk(
    f: PyRef<'_, PyRegressor>,
    params: PyRef<'_, PyModelParams>,
    n_mc: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let oracle = core::build_fdp(&params.inner).map_err(to_py)?;
    core::mc_excess_risk(&f.inner, &params.inner, &oracle, n_mc, seed).map_err(to_py)
}

/// W2, Kolmogorov and average-W2 unfairness of a regressor's output laws.
#[pyfunction]
fn unfairness<'py>(
    py: Python<'py>,
    f: PyRef<'_, PyRegressor>,
    params: PyRef<'_, PyModelParams>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = core::unfairness(&f.inner, &params.inner).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("w2_max", r.w2_max)?;
    out.set_item("kol_max", r.kol_max)?;
    out.set_item("avg_w2", r.avg_w2)?;
    out.set_item("pairwise", r.pairwise)?;
    Ok(out)
}

#[pyfunction]
fn fano_value(epsilon: f64, k: usize, avg_kl: f64) -> PyResult<f64> {
    core::lower_bound::fano_value(epsilon, k, avg_kl).map_err(to_py)
}

#[pyfunction]
fn kl_conditional(
    theta: PyRef<'_, PyModelParams>,
    theta_prime: PyRef<'_, PyModelParams>,
    n_counts: Vec<usize>,
) -> PyResult<f64> {
    core::lower_bound::kl_conditional(&theta.inner, &theta_prime.inner, &n_counts).map_err(to_py)
}

/// Log-log least-squares fit; returns `(slope, intercept, r2)`.
#[pyfunction]
fn fit_slope(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = core::fit_slope(&points).map_err(to_py)?;
    Ok((f.slope, f.intercept, f.r2))
}

/// Runs a sweep from a JSON config and returns the CSV text.
#[pyfunction]
fn run_sweep(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = core::SweepConfig::from_json(config_json).map_err(to_py)?;
    let result = py.detach(|| core::run_sweep(&cfg)).map_err(to_py)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf).map_err(to_py)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn fairreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRegressor>()?;
    m.add_function(wrap_pyfunction!(sample_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fair_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(excess_risk, m)?)?;
    m.add_function(wrap_pyfunction!(mc_excess_risk, m)?)?;
    m.add_function(wrap_pyfunction!(unfairness, m)?)?;
    m.add_function(wrap_pyfunction!(fano_value, m)?)?;
    m.add_function(wrap_pyfunction!(kl_conditional, m)?)?;
    m.add_function(wrap_pyfunction!(fit_slope, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
