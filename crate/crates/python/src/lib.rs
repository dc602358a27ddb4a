//! Python bindings: operators, the inner solver, soft thresholding and full runs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cgvamp::cg::{self, AcgConfig};
use cgvamp::config::RunConfig;
use cgvamp::denoise::{self, DivergenceMode, SoftThreshold};
use cgvamp::harness;
use cgvamp::operators::{self, FijlSpec, LinearOperator, MeasurementOperator};
use cgvamp::outer;

fn err(e: cgvamp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn check_len(what: &str, got: usize, want: usize) -> PyResult<()> {
    if got != want {
        return Err(PyValueError::new_err(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Trace-normalized measurement operator (`dense` or `fijl`).
#[pyclass(name = "Operator", module = "cgvamp_py", frozen)]
struct PyOperator {
    inner: MeasurementOperator,
}

#[pymethods]
impl PyOperator {
    #[staticmethod]
    #[pyo3(signature = (n, m, kappa, seed=0))]
    fn dense(n: usize, m: usize, kappa: f64, seed: u64) -> PyResult<Self> {
        Ok(PyOperator { inner: operators::build_dense(n, m, kappa, seed).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n, m, kappa, seed=0))]
    fn fijl(n: usize, m: usize, kappa: f64, seed: u64) -> PyResult<Self> {
        let spec = FijlSpec::new(n, m, kappa, seed).map_err(err)?;
        Ok(PyOperator { inner: operators::build_fijl(&spec).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    fn spectrum(&self) -> Vec<f64> {
        self.inner.spectrum().to_vec()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        check_len("x", x.len(), self.inner.n())?;
        Ok(self.inner.forward(&x))
    }

    fn adjoint(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        check_len("u", u.len(), self.inner.m())?;
        Ok(self.inner.adjoint(&u))
    }

    /// `v_w u + v_ba A Aᵀ u`.
    fn apply_w(&self, u: Vec<f64>, v_w: f64, v_ba: f64) -> PyResult<Vec<f64>> {
        operators::apply_w(&self.inner, v_w, v_ba, &u).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Operator({}, n={}, m={}, kappa={})",
            self.inner.kind(),
            self.inner.n(),
            self.inner.m(),
            self.inner.condition_number()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (r, v, lambda_mult=1.4))]
fn soft_threshold(r: Vec<f64>, v: f64, lambda_mult: f64) -> Vec<f64> {
    denoise::soft_threshold(&r, v, lambda_mult)
}

#[pyfunction]
#[pyo3(signature = (r, v, lambda_mult=1.4))]
fn soft_threshold_divergence(r: Vec<f64>, v: f64, lambda_mult: f64) -> f64 {
    denoise::analytic_divergence_soft_threshold(&r, v, lambda_mult)
}

/// Black-box divergence of the soft-threshold denoiser with Rademacher probes.
#[pyfunction]
#[pyo3(signature = (r, v, lambda_mult=1.4, probes=1, seed=0, epsilon=None))]
fn mc_divergence(
    r: Vec<f64>,
    v: f64,
    lambda_mult: f64,
    probes: usize,
    seed: u64,
    epsilon: Option<f64>,
) -> PyResult<f64> {
    let eps = epsilon.unwrap_or_else(|| denoise::default_epsilon(&r));
    denoise::mc_divergence(&SoftThreshold { lambda_mult }, &r, v, eps, probes, seed).map_err(err)
}

/// Onsager-corrected soft-threshold step. Returns `(x_ba, gamma_b, mu_b)`.
#[pyfunction]
#[pyo3(signature = (x_ab, v_ab, lambda_mult=1.4))]
fn block_b(x_ab: Vec<f64>, v_ab: f64, lambda_mult: f64) -> PyResult<(Vec<f64>, f64, Vec<f64>)> {
    let out =
        denoise::block_b_update(&x_ab, v_ab, &SoftThreshold { lambda_mult }, DivergenceMode::Analytic).map_err(err)?;
    Ok((out.x_ba, out.gamma_b, out.mu_b))
}

/// Adaptive CG on `(v_w I + v_ba A Aᵀ) μ = z`.
#[pyfunction]
#[pyo3(signature = (z, op, v_w, v_ba, c=0.9, delta_threshold=0.015, i_max=100, prev_v_ab=f64::INFINITY))]
#[allow(clippy::too_many_arguments)]
fn run_acg<'py>(
    py: Python<'py>,
    z: Vec<f64>,
    op: &PyOperator,
    v_w: f64,
    v_ba: f64,
    c: f64,
    delta_threshold: f64,
    i_max: usize,
    prev_v_ab: f64,
) -> PyResult<Bound<'py, PyDict>> {
    check_len("z", z.len(), op.inner.m())?;
    let config = AcgConfig { c, delta_threshold, i_max };
    let out = cg::run_acg(&z, &op.inner, v_w, v_ba, &config, prev_v_ab, None, None).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mu", out.mu)?;
    d.set_item("gamma", out.gamma_tilde)?;
    d.set_item("v_ab", out.v_ab_tilde)?;
    d.set_item("iterations", out.iterations)?;
    d.set_item("v_ab_history", out.rows.iter().map(|r| r.v_ab_tilde).collect::<Vec<_>>())?;
    d.set_item("flags", out.flags.label())?;
    Ok(d)
}

/// `ṽ_{B→A}` from the residual `z = y − A x_ba`.
#[pyfunction]
fn estimate_v_ba(z: Vec<f64>, v_w: f64, op: &PyOperator) -> PyResult<f64> {
    check_len("z", z.len(), op.inner.m())?;
    Ok(outer::estimate_v_ba(&z, v_w, &op.inner).0)
}

/// Runs a TOML run configuration and returns the per-iteration trace.
#[pyfunction]
#[pyo3(signature = (config_toml, seed=None))]
fn run<'py>(py: Python<'py>, config_toml: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig::from_toml_str(config_toml).map_err(err)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let instance = cfg.instance().map_err(err)?;
    let out = py.detach(|| outer::run(&cfg, &instance));
    let records = out
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("t", r.t)?;
            d.set_item("inner_iters", r.inner_iters)?;
            d.set_item("gamma_a", r.gamma_a)?;
            d.set_item("v_ba_tilde", r.v_ba_tilde)?;
            d.set_item("v_ab_tilde", r.v_ab_tilde)?;
            d.set_item("gamma_b", r.gamma_b)?;
            d.set_item("nmse", r.nmse)?;
            d.set_item("nmse_db", r.nmse_db)?;
            d.set_item("elapsed", r.elapsed)?;
            d.set_item("flags", &r.flags)?;
            d.set_item("oracle_v_ab", r.oracle_v_ab)?;
            d.set_item("oracle_audit", r.oracle_audit)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let d = PyDict::new(py);
    d.set_item("records", records)?;
    d.set_item("estimate", out.estimate)?;
    d.set_item("x", instance.x)?;
    d.set_item("error", out.error.map(|e| e.to_string()))?;
    d.set_item("config_hash", cfg.hash())?;
    Ok(d)
}

/// Estimator-versus-truth checks over `seeds`: `(name, worst, bound, pass)` tuples.
#[pyfunction]
fn audit(py: Python<'_>, config_toml: &str, seeds: Vec<u64>) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let cfg = RunConfig::from_toml_str(config_toml).map_err(err)?;
    let (checks, _) = py.detach(|| harness::audit(&cfg, &seeds)).map_err(err)?;
    Ok(checks.into_iter().map(|c| (c.name, c.worst, c.threshold, c.pass)).collect())
}

#[pymodule]
fn cgvamp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(mc_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(block_b, m)?)?;
    m.add_function(wrap_pyfunction!(run_acg, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_v_ba, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    Ok(())
}
