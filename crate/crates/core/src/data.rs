//! The dataset container and the estimate-report model shared by all
//! estimators.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed data `(X, A, Y)` with optional instruments-plus-covariates `Z`.
///
/// Construction never fails on content; [`Dataset::validate`] reports every
/// invariant violation and estimators call [`Dataset::ensure_valid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
    z: Option<DMatrix<f64>>,
    /// Column of `z` holding each column of `x`.
    x_in_z: Vec<usize>,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

/// One failed dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub row: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)?;
        match (self.row, self.column) {
            (Some(r), Some(c)) => write!(f, " at row {r}, column {c} of {}", self.field),
            (Some(r), None) => write!(f, " at row {r} of {}", self.field),
            (None, Some(c)) => write!(f, " at column {c} of {}", self.field),
            (None, None) => write!(f, " ({})", self.field),
        }
    }
}

impl Dataset {
    /// Builds a dataset from a row-major covariate matrix.
    pub fn new(x: DMatrix<f64>, a: Vec<f64>, y: Vec<f64>) -> Self {
        let x_names = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        Dataset { x, a, y, z: None, x_in_z: Vec::new(), x_names, z_names: Vec::new() }
    }

    pub fn from_rows(x: &[Vec<f64>], a: Vec<f64>, y: Vec<f64>) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let m = DMatrix::from_fn(x.len(), d, |i, j| x[i].get(j).copied().unwrap_or(f64::NAN));
        Self::new(m, a, y)
    }

    /// Attaches instruments. `z` holds every covariate plus the excluded
    /// instruments; `x_in_z[j]` is the column of `z` equal to covariate `j`.
    pub fn with_instruments(mut self, z: DMatrix<f64>, x_in_z: Vec<usize>) -> Self {
        self.z_names = (0..z.ncols()).map(|j| format!("z{}", j + 1)).collect();
        self.z = Some(z);
        self.x_in_z = x_in_z;
        self
    }

    /// Convenience: `z = [x, instruments]`.
    pub fn with_excluded_instruments(self, instruments: &DMatrix<f64>) -> Self {
        let n = self.x.nrows();
        let d = self.x.ncols();
        let k = instruments.ncols();
        let mut z = DMatrix::zeros(n, d + k);
        z.view_mut((0, 0), (n, d)).copy_from(&self.x);
        if instruments.nrows() == n {
            z.view_mut((0, d), (n, k)).copy_from(instruments);
        }
        let names: Vec<String> = self
            .x_names
            .iter()
            .cloned()
            .chain((0..k).map(|j| format!("iv{}", j + 1)))
            .collect();
        self.with_instruments(z, (0..d).collect()).with_z_names(names)
    }

    pub fn with_x_names(mut self, names: Vec<String>) -> Self {
        self.x_names = names;
        self
    }

    pub fn with_z_names(mut self, names: Vec<String>) -> Self {
        self.z_names = names;
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn a(&self) -> &[f64] {
        &self.a
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn z(&self) -> Option<&DMatrix<f64>> {
        self.z.as_ref()
    }
    pub fn x_in_z(&self) -> &[usize] {
        &self.x_in_z
    }
    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }
    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }
    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Returns a new dataset holding the given rows (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), self.x.ncols(), |i, j| self.x[(rows[i], j)]);
        let z = self
            .z
            .as_ref()
            .map(|z| DMatrix::from_fn(rows.len(), z.ncols(), |i, j| z[(rows[i], j)]));
        Dataset {
            x,
            a: rows.iter().map(|&r| self.a[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            z,
            x_in_z: self.x_in_z.clone(),
            x_names: self.x_names.clone(),
            z_names: self.z_names.clone(),
        }
    }

    /// Same rows, outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Dataset {
        Dataset { y, ..self.clone() }
    }

    /// Lists every invariant violation; empty iff the dataset is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.y.len();
        if n < 2 {
            out.push(v("y", None, None, format!("need at least 2 rows, found {n}")));
        }
        if self.x.nrows() != n {
            out.push(v("x", None, None, format!("x has {} rows but y has {n}", self.x.nrows())));
        }
        if self.a.len() != n {
            out.push(v("a", None, None, format!("a has {} rows but y has {n}", self.a.len())));
        }
        for (i, &ai) in self.a.iter().enumerate() {
            if ai != 0.0 && ai != 1.0 {
                out.push(v("a", Some(i), None, format!("non-binary treatment {ai}")));
            }
        }
        for (i, &yi) in self.y.iter().enumerate() {
            if !yi.is_finite() {
                out.push(v("y", Some(i), None, format!("non-finite outcome {yi}")));
            }
        }
        for i in 0..self.x.nrows() {
            for j in 0..self.x.ncols() {
                if !self.x[(i, j)].is_finite() {
                    out.push(v("x", Some(i), Some(j), "non-finite covariate".into()));
                }
            }
        }
        if let Some(z) = &self.z {
            if z.nrows() != n {
                out.push(v("z", None, None, format!("z has {} rows but y has {n}", z.nrows())));
            }
            for i in 0..z.nrows() {
                for j in 0..z.ncols() {
                    if !z[(i, j)].is_finite() {
                        out.push(v("z", Some(i), Some(j), "non-finite instrument".into()));
                    }
                }
            }
            if self.x_in_z.len() != self.x.ncols() {
                out.push(v(
                    "z",
                    None,
                    None,
                    format!(
                        "{} covariate columns declared in z, x has {}",
                        self.x_in_z.len(),
                        self.x.ncols()
                    ),
                ));
            }
            let mut seen = std::collections::BTreeSet::new();
            for (j, &c) in self.x_in_z.iter().enumerate() {
                if c >= z.ncols() {
                    out.push(v("z", None, Some(c), format!("covariate {j} mapped to missing z column")));
                } else if !seen.insert(c) {
                    out.push(v("z", None, Some(c), format!("covariate {j} mapped to duplicate z column")));
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidDataset(violations))
        }
    }

    /// Validity plus at least one row in each arm.
    pub fn ensure_both_arms(&self) -> Result<()> {
        self.ensure_valid()?;
        let t = self.n_treated();
        if t == 0 || t == self.n() {
            return Err(Error::InvalidDataset(vec![v(
                "a",
                None,
                None,
                format!("need both arms, found {t} treated of {}", self.n()),
            )]));
        }
        Ok(())
    }

    /// Validity plus instruments strictly richer than the covariates.
    pub fn ensure_instruments(&self) -> Result<&DMatrix<f64>> {
        self.ensure_both_arms()?;
        match &self.z {
            Some(z) if z.ncols() > self.x.ncols() => Ok(z),
            Some(_) => Err(Error::Spec("z must contain at least one excluded instrument".into())),
            None => Err(Error::Spec("dataset has no instruments".into())),
        }
    }
}

fn v(field: &str, row: Option<usize>, column: Option<usize>, message: String) -> Violation {
    Violation { field: field.into(), row, column, message }
}

/// Identification regime an estimand is defined under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Unconfounded,
    IvLatentIndex,
}

/// IE(δ) or MIE under a regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimandKind {
    Ie { delta: f64, regime: Regime },
    Mie { regime: Regime },
}

impl EstimandKind {
    pub fn ie(delta: f64, regime: Regime) -> Result<Self> {
        if delta > 0.0 && delta.is_finite() {
            Ok(EstimandKind::Ie { delta, regime })
        } else {
            Err(Error::Domain(format!("IE requires delta > 0, got {delta}")))
        }
    }

    pub fn mie(regime: Regime) -> Self {
        EstimandKind::Mie { regime }
    }
}

impl fmt::Display for EstimandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |r: &Regime| match r {
            Regime::Unconfounded => "unconfounded",
            Regime::IvLatentIndex => "iv",
        };
        match self {
            EstimandKind::Ie { delta, regime } => write!(f, "IE(delta={delta}) [{}]", r(regime)),
            EstimandKind::Mie { regime } => write!(f, "MIE [{}]", r(regime)),
        }
    }
}

/// Result of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: String,
    pub point: f64,
    pub std_error: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub n_used: usize,
    pub method: String,
    pub seed: Option<u64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub fn new(estimand: impl Into<String>, method: impl Into<String>, point: f64, n_used: usize) -> Self {
        EstimateReport {
            estimand: estimand.into(),
            point,
            std_error: None,
            ci_lower: None,
            ci_upper: None,
            n_used,
            method: method.into(),
            seed: None,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se.max(0.0));
        self
    }

    /// Attaches a confidence interval. An interval that misses the point
    /// estimate is widened to include it and flagged `ci_widened`.
    pub fn with_ci(mut self, lower: f64, upper: f64) -> Self {
        let (mut lo, mut hi) = if lower <= upper { (lower, upper) } else { (upper, lower) };
        if self.point < lo || self.point > hi {
            lo = lo.min(self.point);
            hi = hi.max(self.point);
            self.diagnostics.insert("ci_widened".into(), 1.0);
        }
        self.ci_lower = Some(lo);
        self.ci_upper = Some(hi);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn diag(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.into(), value);
        self
    }

    /// Checks the report invariants.
    pub fn is_consistent(&self) -> bool {
        let se_ok = self.std_error.is_none_or(|s| s >= 0.0);
        let ci_ok = match (self.ci_lower, self.ci_upper) {
            (Some(l), Some(u)) => l <= self.point && self.point <= u,
            (None, None) => true,
            _ => false,
        };
        se_ok && ci_ok
    }
}
