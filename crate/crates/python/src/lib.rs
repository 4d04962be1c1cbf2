//! Python bindings: datasets, intervention families, estimators and
//! config-driven runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mie_cli::config::{DataSection, EstimateSection, EstimatorKind, RegimeChoice};
use mie_cli::report::Record;
use mie_cli::run::{self, Command, Plan};
use mie_cli::{CliError, MachineReport, ResultTable, RunConfig};
use mie_core::inference::BootstrapPlan;
use mie_core::interventions::Polynomial;
use mie_core::nuisance::PropensityModel;
use mie_core::{CustomLambda, InterventionFamily, MtpPolicy};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::IntoDeserializer;
use serde::Deserialize;

create_exception!(mie, MieError, PyValueError, "Raised for invalid input or a failed estimation.");

fn err(e: CliError) -> PyErr {
    MieError::new_err(e.one_line())
}

fn core_err(e: mie_core::Error) -> PyErr {
    err(CliError::Core { context: "mie".into(), source: e })
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let k = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != k) {
        return Err(MieError::new_err(format!("{what}: row {i} has {} entries, expected {k}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
}

/// Rows of covariates, a 0/1 treatment, an outcome and optional excluded
/// instruments.
#[pyclass(module = "mie", frozen)]
pub struct Dataset {
    inner: mie_core::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (x, a, y, instruments = None))]
    fn new(x: Vec<Vec<f64>>, a: Vec<f64>, y: Vec<f64>, instruments: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let xm = matrix(&x, "x")?;
        if a.len() != xm.nrows() || y.len() != xm.nrows() {
            return Err(MieError::new_err(format!("x has {} rows, a {}, y {}", xm.nrows(), a.len(), y.len())));
        }
        let mut inner = mie_core::Dataset::new(xm, a, y);
        if let Some(z) = instruments {
            let zm = matrix(&z, "instruments")?;
            if zm.nrows() != inner.n() {
                return Err(MieError::new_err(format!("instruments have {} rows, x has {}", zm.nrows(), inner.n())));
            }
            inner = inner.with_excluded_instruments(&zm);
        }
        inner.ensure_valid().map_err(core_err)?;
        Ok(Dataset { inner })
    }

    /// Reads a CSV with the given column roles; categorical maps column to
    /// reference level.
    #[staticmethod]
    #[pyo3(signature = (path, treatment, outcome, covariates, instruments = vec![], categorical = BTreeMap::new(), treated_level = None, outcome_level = None))]
    #[allow(clippy::too_many_arguments)]
    fn from_csv(
        path: PathBuf,
        treatment: String,
        outcome: String,
        covariates: Vec<String>,
        instruments: Vec<String>,
        categorical: BTreeMap<String, String>,
        treated_level: Option<String>,
        outcome_level: Option<String>,
    ) -> PyResult<Self> {
        let roles = DataSection {
            path: path.clone(),
            treatment,
            treated_level,
            outcome,
            outcome_level,
            covariates,
            instruments,
            categorical,
            expected_design_columns: None,
        };
        let loaded = mie_cli::csvio::load_csv(&path, &roles).map_err(err)?;
        Ok(Dataset { inner: loaded.dataset })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        mie_cli::csvio::write_csv(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n_treated(&self) -> usize {
        self.inner.n_treated()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.x_names().to_vec()
    }

    #[getter]
    fn has_instruments(&self) -> bool {
        self.inner.z().is_some()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, treated={}, covariates={}, instruments={})",
            self.inner.n(),
            self.inner.n_treated(),
            self.inner.x().ncols(),
            self.has_instruments()
        )
    }
}

/// A one-parameter family of propensity shifts.
#[pyclass(module = "mie", frozen, from_py_object)]
#[derive(Clone)]
pub struct Family {
    inner: InterventionFamily,
}

#[pymethods]
impl Family {
    #[staticmethod]
    fn additive() -> Self {
        Family { inner: InterventionFamily::additive() }
    }

    #[staticmethod]
    fn multiplicative() -> Self {
        Family { inner: InterventionFamily::multiplicative() }
    }

    #[staticmethod]
    fn equalizing() -> Self {
        Family { inner: InterventionFamily::equalizing() }
    }

    #[staticmethod]
    fn ipsi() -> Self {
        Family { inner: InterventionFamily::ipsi() }
    }

    /// The four families above, in table order.
    #[staticmethod]
    fn stylized() -> Vec<Family> {
        InterventionFamily::stylized().into_iter().map(|inner| Family { inner }).collect()
    }

    /// Weight given by polynomial coefficients in p, constant term first.
    #[staticmethod]
    fn custom(coefficients: Vec<f64>) -> Self {
        let lambda = CustomLambda::Polynomial { lambda_poly: Polynomial(coefficients) };
        Family { inner: InterventionFamily::custom(lambda) }
    }

    /// Modified treatment policy with polynomial join and exit rates.
    #[staticmethod]
    #[pyo3(signature = (join, exit = vec![]))]
    fn mtp(join: Vec<f64>, exit: Vec<f64>) -> Self {
        let policy = MtpPolicy { join: Polynomial(join), exit: Polynomial(exit) };
        Family { inner: InterventionFamily::mtp(policy) }
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    /// Marginal weight lambda(p).
    fn weight(&self, p: f64) -> PyResult<f64> {
        self.inner.lambda(p).map_err(core_err)
    }

    /// Shifted propensity at step delta.
    fn pi_delta(&self, p: f64, delta: f64) -> PyResult<f64> {
        self.inner.pi_delta(p, delta).map_err(core_err)
    }

    fn __repr__(&self) -> String {
        format!("Family({})", self.inner.name())
    }
}

/// One estimate. `row` is the family label, `column` the estimator label.
#[pyclass(module = "mie", frozen, get_all)]
pub struct Report {
    row: String,
    column: String,
    estimand: String,
    method: String,
    point: f64,
    std_error: Option<f64>,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    n_used: usize,
    diagnostics: BTreeMap<String, f64>,
}

impl From<Record> for Report {
    fn from(r: Record) -> Self {
        let e = r.report;
        Report {
            row: r.row,
            column: r.column,
            estimand: e.estimand,
            method: e.method,
            point: e.point,
            std_error: e.std_error,
            ci_lower: e.ci_lower,
            ci_upper: e.ci_upper,
            n_used: e.n_used,
            diagnostics: e.diagnostics,
        }
    }
}

#[pymethods]
impl Report {
    fn __repr__(&self) -> String {
        let se = self.std_error.map_or("-".into(), |s| format!("{s:.4}"));
        format!("Report({} {}: {:.4}, se {se})", self.column, self.estimand, self.point)
    }
}

fn propensity_model(s: &str) -> PyResult<PropensityModel> {
    PropensityModel::deserialize(s.into_deserializer())
        .map_err(|e: serde::de::value::Error| MieError::new_err(format!("propensity: {e}")))
}

/// Estimates the MIE (and IE at each delta where supported) for every
/// family and estimator. Estimators default to the regime's standard set.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (data, families = None, estimators = None, deltas = vec![], bootstrap = 0, seed = 0, propensity = "logit"))]
fn estimate(
    py: Python<'_>,
    data: &Dataset,
    families: Option<Vec<Family>>,
    estimators: Option<Vec<String>>,
    deltas: Vec<f64>,
    bootstrap: usize,
    seed: u64,
    propensity: &str,
) -> PyResult<Vec<Report>> {
    let families: Vec<InterventionFamily> = match families {
        Some(f) => f.into_iter().map(|f| f.inner).collect(),
        None => InterventionFamily::stylized().to_vec(),
    };
    let kinds: Vec<EstimatorKind> = match estimators {
        Some(names) => names.iter().map(|s| s.parse().map_err(err)).collect::<PyResult<_>>()?,
        None if data.has_instruments() => EstimatorKind::defaults(RegimeChoice::Iv),
        None => EstimatorKind::defaults(RegimeChoice::Unconfounded),
    };
    let model = propensity_model(propensity)?;
    let mut est = EstimateSection::default();
    est.unconfounded.propensity = model;
    est.semiparametric.propensity = model;
    let boot = (bootstrap > 0).then(|| BootstrapPlan::new(bootstrap, seed));
    let inner = &data.inner;
    let records = py
        .detach(|| {
            let plan = Plan::new(&families, &deltas, &est);
            run::estimate_all(inner, &kinds, &plan, boot.as_ref())
        })
        .map_err(err)?;
    Ok(records.into_iter().map(Report::from).collect())
}

/// Draws the dataset described by the `[dgp]` section of a TOML config.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn simulate(config: &str, seed: Option<u64>) -> PyResult<Dataset> {
    let cfg = RunConfig::from_toml(config).map_err(err)?;
    let dgp = cfg.dgp.as_ref().ok_or_else(|| MieError::new_err("config has no [dgp] section"))?;
    let inner = run::simulate(dgp, seed.unwrap_or(cfg.seed)).map_err(err)?;
    Ok(Dataset { inner })
}

/// Runs `estimate`, `oracle` or `replicate-rhc` from a TOML config string
/// and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (command, config = "", seed = None))]
fn run_config(py: Python<'_>, command: &str, config: &str, seed: Option<u64>) -> PyResult<String> {
    let cmd = match command {
        "estimate" => Command::Estimate,
        "oracle" => Command::Oracle,
        "replicate-rhc" => Command::ReplicateRhc,
        other => return Err(MieError::new_err(format!("unknown command {other:?}"))),
    };
    let mut cfg = RunConfig::from_toml(config).map_err(err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (report, _) = py.detach(|| run::run_report(cmd, &cfg)).map_err(err)?;
    Ok(report.to_json())
}

/// Plain-text table for a JSON report.
#[pyfunction]
fn render_table(report_json: &str) -> PyResult<String> {
    let report = MachineReport::from_json(report_json).map_err(|e| MieError::new_err(format!("report: {e}")))?;
    Ok(ResultTable::from_report(&report).render())
}

#[pymodule]
fn mie(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("MieError", m.py().get_type::<MieError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Family>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(render_table, m)?)?;
    Ok(())
}
