//! Python bindings. Tiers and users are 0-based, as in the Rust library.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hetnoma::experiment::{recipe, run_experiment};
use hetnoma::geometry::derived_stats;
use hetnoma::montecarlo::{estimate_coverage, estimate_throughput, simulate_range, SimMode, SimOptions};
use hetnoma::poweropt::{self, Method, Objective};
use hetnoma::{Analytics, Error, NetworkConfig, PowerAllocation, Scheme, TierParams};

/// `ValueError` for bad input, `RuntimeError` for numerical failures.
pub fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidAllocation(_)
        | Error::Index(_)
        | Error::NonPositiveArgument(_)
        | Error::EmptyFeasibleRegion(_)
        | Error::Spec(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

pub fn parse_scheme(s: &str) -> PyResult<Scheme> {
    s.parse().map_err(to_py_err)
}

fn parse_mode(s: &str) -> PyResult<SimMode> {
    s.parse().map_err(to_py_err)
}

fn parse_objective(s: &str) -> PyResult<Objective> {
    match s {
        "cell_coverage" => Ok(Objective::CellCoverage),
        "cell_throughput" => Ok(Objective::CellThroughput),
        other => Err(PyValueError::new_err(format!("unknown objective '{other}'"))),
    }
}

fn parse_method(s: &str) -> PyResult<Method> {
    match s {
        "grid" => Ok(Method::Grid),
        "pattern_search" => Ok(Method::PatternSearch),
        other => Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    }
}

fn alloc(betas: Vec<f64>) -> PyResult<PowerAllocation> {
    PowerAllocation::new(betas).map_err(to_py_err)
}

/// A multi-tier network: tiers given as `(power_w, intensity_per_m2, bias)`.
#[pyclass(name = "Network", module = "hetnoma_py", frozen)]
pub struct PyNetwork {
    config: NetworkConfig,
}

impl PyNetwork {
    fn analytics(&self) -> PyResult<Analytics> {
        Analytics::new(&self.config).map_err(to_py_err)
    }
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (tiers, user_intensity, alpha = 4.0, group_size = 2, sir_threshold = 1.0))]
    fn new(tiers: Vec<(f64, f64, f64)>, user_intensity: f64, alpha: f64, group_size: usize, sir_threshold: f64) -> PyResult<Self> {
        let tiers = tiers
            .into_iter()
            .map(|(p, l, b)| TierParams::new(p, l, b))
            .collect::<hetnoma::Result<Vec<_>>>()
            .map_err(to_py_err)?;
        let config = NetworkConfig::new(tiers, user_intensity, alpha, group_size, sir_threshold).map_err(to_py_err)?;
        Ok(Self { config })
    }

    /// The two-tier macro/pico network used by the built-in recipes.
    #[staticmethod]
    #[pyo3(signature = (lambda2 = 5e-4, mu = 5e-4))]
    fn reference_network(lambda2: f64, mu: f64) -> PyResult<Self> {
        let config = hetnoma::experiment::reference_network(lambda2, mu).map_err(to_py_err)?;
        Ok(Self { config })
    }

    #[getter]
    fn group_size(&self) -> usize {
        self.config.group_size
    }

    #[getter]
    fn num_tiers(&self) -> usize {
        self.config.num_tiers()
    }

    /// Cell load, non-void and association probabilities per tier.
    fn derived_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = derived_stats(&self.config);
        let d = PyDict::new(py);
        d.set_item("cell_load", s.cell_load)?;
        d.set_item("nonvoid_prob", s.nonvoid_prob)?;
        d.set_item("assoc_prob", s.assoc_prob)?;
        d.set_item("scaled_total_intensity", s.scaled_total_intensity)?;
        Ok(d)
    }

    #[pyo3(signature = (betas, tier, scheme = "non_coordinated", void_aware = true))]
    fn coverage(&self, betas: Vec<f64>, tier: usize, scheme: &str, void_aware: bool) -> PyResult<Vec<f64>> {
        let a = alloc(betas)?;
        let r = self
            .analytics()?
            .coverage_all(&a, tier, parse_scheme(scheme)?, void_aware)
            .map_err(to_py_err)?;
        Ok(r.per_user.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    #[pyo3(signature = (betas, tier, scheme = "non_coordinated"))]
    fn throughput(&self, betas: Vec<f64>, tier: usize, scheme: &str) -> PyResult<Vec<f64>> {
        let a = alloc(betas)?;
        let r = self.analytics()?.throughput_all(&a, tier, parse_scheme(scheme)?).map_err(to_py_err)?;
        Ok(r.per_user.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    #[pyo3(signature = (betas, tier, scheme = "non_coordinated"))]
    fn cell_coverage(&self, betas: Vec<f64>, tier: usize, scheme: &str) -> PyResult<f64> {
        self.analytics()?
            .cell_coverage(&alloc(betas)?, tier, parse_scheme(scheme)?)
            .map_err(to_py_err)
    }

    #[pyo3(signature = (betas, tier, scheme = "non_coordinated"))]
    fn cell_throughput(&self, betas: Vec<f64>, tier: usize, scheme: &str) -> PyResult<f64> {
        self.analytics()?
            .cell_throughput(&alloc(betas)?, tier, parse_scheme(scheme)?)
            .map_err(to_py_err)
    }

    fn single_user_throughput(&self, tier: usize) -> PyResult<f64> {
        self.analytics()?.single_user_throughput(tier).map_err(to_py_err)
    }

    /// Monte Carlo estimates with 95% half-widths; `None` where a
    /// conditional rate had no samples.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (betas, tier, scheme = "non_coordinated", trials = 10_000, seed = 1, mode = "fast_path"))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        betas: Vec<f64>,
        tier: usize,
        scheme: &str,
        trials: u64,
        seed: u64,
        mode: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let a = alloc(betas)?;
        let scheme = parse_scheme(scheme)?;
        let mode = parse_mode(mode)?;
        let theta = self.config.sir_threshold;
        let (cov, thr) = py
            .detach(|| -> hetnoma::Result<_> {
                let batch = simulate_range(&self.config, &a, tier, scheme, mode, 0..trials, seed, &SimOptions::default())?;
                Ok((estimate_coverage(&batch, &a, theta, scheme)?, estimate_throughput(&batch, &a, scheme)?))
            })
            .map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("coverage", cov.per_user)?;
        d.set_item("coverage_ci95", cov.ci_halfwidth)?;
        d.set_item("throughput", thr.per_user)?;
        d.set_item("throughput_ci95", thr.ci_halfwidth)?;
        Ok(d)
    }

    /// Best feasible allocation for a cell objective: `(betas, value)`.
    #[pyo3(signature = (tier, scheme = "non_coordinated", objective = "cell_coverage", method = "pattern_search", resolution = None))]
    fn optimize(
        &self,
        tier: usize,
        scheme: &str,
        objective: &str,
        method: &str,
        resolution: Option<f64>,
    ) -> PyResult<(Vec<f64>, f64)> {
        let r = poweropt::optimize(
            &self.analytics()?,
            tier,
            parse_scheme(scheme)?,
            parse_objective(objective)?,
            parse_method(method)?,
            resolution,
        )
        .map_err(to_py_err)?;
        Ok((r.best_alloc.betas().to_vec(), r.best_value))
    }
}

/// `(feasible, first violated constraint or None)`.
#[pyfunction]
#[pyo3(signature = (betas, theta, scheme = "non_coordinated"))]
fn feasible(betas: Vec<f64>, theta: f64, scheme: &str) -> PyResult<(bool, Option<String>)> {
    let f = poweropt::feasible(&alloc(betas)?, theta, parse_scheme(scheme)?);
    Ok((f.feasible, f.violated))
}

/// Runs a built-in recipe and returns its CSV text.
#[pyfunction]
#[pyo3(signature = (name, trials = None, seed = None, jobs = None))]
fn run_recipe(py: Python<'_>, name: &str, trials: Option<u64>, seed: Option<u64>, jobs: Option<usize>) -> PyResult<String> {
    let mut spec = recipe(name).map_err(to_py_err)?;
    if let Some(t) = trials {
        spec.trials = t;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    py.detach(|| run_experiment(&spec, jobs).and_then(|out| out.table.to_csv()))
        .map_err(to_py_err)
}

#[pymodule]
pub fn hetnoma_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(feasible, m)?)?;
    m.add_function(wrap_pyfunction!(run_recipe, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
