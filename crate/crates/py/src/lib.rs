//! Python bindings for the aipw estimation library.
//!
//! Exposes the main operations on plain Python lists: median-heuristic
//! bandwidth, kernel ridge regression, gradient-based covariate selection,
//! group-lasso propensity fitting, and the full AIPW mean estimate with a
//! None-masked response.

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use aipw::estimators::{prop_estimate, IncompleteDataset, Lambda2Choice, PropOptions};
use aipw::kernel::{self, CovariateMatrix, KernelConfig, KrrModel, DEFAULT_RIDGE};
use aipw::propensity::{fit_group_lasso, fit_group_lasso_auto, BcgdConfig, GroupStructure};
use aipw::select::{fit_sparse_krr, ThresholdSearchConfig};

fn to_py_err(err: aipw::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<CovariateMatrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("x must contain at least one row"));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("x rows have unequal lengths"));
    }
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let arr = Array2::from_shape_vec((n, p), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    CovariateMatrix::new(arr).map_err(to_py_err)
}

/// Median of the pairwise Euclidean distances between the rows of `x`.
#[pyfunction]
fn median_bandwidth(x: Vec<Vec<f64>>) -> PyResult<f64> {
    kernel::median_bandwidth(&matrix_from_rows(x)?).map_err(to_py_err)
}

/// Gaussian kernel ridge regression fitted on (x, y).
#[pyclass]
struct KernelRidge {
    model: KrrModel,
}

#[pymethods]
impl KernelRidge {
    /// Fit with the median-heuristic bandwidth unless one is given.
    #[new]
    #[pyo3(signature = (x, y, ridge = DEFAULT_RIDGE, bandwidth = None))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, ridge: f64, bandwidth: Option<f64>) -> PyResult<Self> {
        let x = matrix_from_rows(x)?;
        let config = match bandwidth {
            Some(b) => KernelConfig::new(b, ridge).map_err(to_py_err)?,
            None => KernelConfig::with_median_bandwidth(&x, ridge).map_err(to_py_err)?,
        };
        let y = Array1::from(y);
        let model = kernel::fit_krr(&x, &y.view(), &config).map_err(to_py_err)?;
        Ok(Self { model })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix_from_rows(x)?;
        Ok(self.model.predict(&x).map_err(to_py_err)?.to_vec())
    }

    fn gradient(&self, point: Vec<f64>) -> PyResult<Vec<f64>> {
        let p = Array1::from(point);
        Ok(self.model.gradient_eval(&p.view()).map_err(to_py_err)?.to_vec())
    }

    fn gradient_norms(&self) -> PyResult<Vec<f64>> {
        let norms =
            kernel::gradient_norms(&self.model, self.model.train_x()).map_err(to_py_err)?;
        Ok(norms.values().to_vec())
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.model.config().bandwidth()
    }
}

/// Gradient-norm covariate selection with the stability-chosen threshold.
/// Returns a dict with 0-based `active` indices, `norms`, `threshold` and
/// the `no_signal` flag.
#[pyfunction]
#[pyo3(signature = (x, y, seed = 0, ridge = DEFAULT_RIDGE, grid_size = 50, splits = 20))]
fn select_covariates(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    seed: u64,
    ridge: f64,
    grid_size: usize,
    splits: usize,
) -> PyResult<Py<PyDict>> {
    let x = matrix_from_rows(x)?;
    let y = Array1::from(y);
    let config = KernelConfig::with_median_bandwidth(&x, ridge).map_err(to_py_err)?;
    let mut search = ThresholdSearchConfig::new(seed);
    search.grid_size = grid_size;
    search.splits = splits;
    let fit = fit_sparse_krr(&x, &y.view(), &config, &search).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("active", fit.active.indices.clone())?;
    out.set_item("norms", fit.norms.values().to_vec())?;
    out.set_item("threshold", fit.search.threshold)?;
    out.set_item("no_signal", fit.search.no_signal)?;
    Ok(out.into())
}

/// Group-lasso logistic regression of a binary indicator on x;
/// `lambda2=None` selects the penalty by BIC.
#[pyfunction]
#[pyo3(signature = (x, delta, lambda2 = None, standardize = true))]
fn group_lasso(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    delta: Vec<bool>,
    lambda2: Option<f64>,
    standardize: bool,
) -> PyResult<Py<PyDict>> {
    let x = matrix_from_rows(x)?;
    let structure = GroupStructure::singletons(x.cols());
    let config = BcgdConfig { standardize, ..Default::default() };
    let model = match lambda2 {
        Some(l) => fit_group_lasso(&x, &delta, l, &structure, &config).map_err(to_py_err)?,
        None => fit_group_lasso_auto(&x, &delta, &structure, &config).map_err(to_py_err)?,
    };
    let out = PyDict::new(py);
    out.set_item("beta0", model.beta0)?;
    out.set_item("beta1", model.beta1.to_vec())?;
    out.set_item("lambda2", model.lambda2)?;
    out.set_item("converged", model.converged)?;
    out.set_item("iterations", model.iterations)?;
    Ok(out.into())
}

/// AIPW estimate of the mean of `y`, where `None` marks a missing response.
/// Runs the full pipeline: sparse kernel ridge imputation on the complete
/// cases, group-lasso propensity on all rows, AIPW combination.
#[pyfunction]
#[pyo3(signature = (x, y, seed = 0, ridge = DEFAULT_RIDGE, lambda2 = None, clamp_propensity = false))]
fn estimate_mean(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<Option<f64>>,
    seed: u64,
    ridge: f64,
    lambda2: Option<f64>,
    clamp_propensity: bool,
) -> PyResult<Py<PyDict>> {
    let x = matrix_from_rows(x)?;
    if y.len() != x.rows() {
        return Err(PyValueError::new_err(format!(
            "{} responses for {} rows",
            y.len(),
            x.rows()
        )));
    }
    let delta: Vec<bool> = y.iter().map(|v| v.is_some()).collect();
    let y = Array1::from_iter(y.into_iter().map(|v| v.unwrap_or(f64::NAN)));
    let data = IncompleteDataset::new(x, y, delta).map_err(to_py_err)?;

    let mut opts = PropOptions::new(seed);
    opts.ridge = ridge;
    opts.lambda2 = match lambda2 {
        Some(l) => Lambda2Choice::Fixed(l),
        None => Lambda2Choice::Auto,
    };
    if clamp_propensity {
        opts.aipw.clamp = Some(aipw::estimators::PROPENSITY_FLOOR);
    }
    let fit = prop_estimate(&data, &opts).map_err(to_py_err)?;

    let out = PyDict::new(py);
    out.set_item("theta_hat", fit.estimate.theta_hat)?;
    out.set_item("sigma2_hat", fit.estimate.sigma2_hat)?;
    out.set_item("ci_low", fit.estimate.ci_low)?;
    out.set_item("ci_high", fit.estimate.ci_high)?;
    out.set_item("response_rate", fit.estimate.response_rate)?;
    out.set_item("active", fit.sparse.active.indices.clone())?;
    out.set_item("threshold", fit.sparse.search.threshold)?;
    out.set_item("lambda2", fit.propensity.as_ref().map(|m| m.lambda2))?;
    out.set_item(
        "small_propensity_count",
        fit.estimate.small_propensity_count,
    )?;
    Ok(out.into())
}

#[pymodule]
fn aipw_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(median_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(select_covariates, m)?)?;
    m.add_function(wrap_pyfunction!(group_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mean, m)?)?;
    m.add_class::<KernelRidge>()?;
    Ok(())
}
