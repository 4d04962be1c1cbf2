//! Propensity and outcome regressions shared by the estimators.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_binary_with_intercept, fit_ols_with_intercept, IrlsOptions, Link, LinearModel, LogisticModel};

/// Default probability floor applied before weighting.
pub const PROPENSITY_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropensityModel {
    #[default]
    Logit,
    Probit,
    /// Linear probability model by least squares.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityFit {
    Binary(LogisticModel),
    Linear(LinearModel),
}

impl PropensityFit {
    /// Unclipped fitted probabilities.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            PropensityFit::Binary(m) => m.predict(x),
            PropensityFit::Linear(m) => m.predict(x),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            PropensityFit::Binary(m) => m.converged,
            PropensityFit::Linear(_) => true,
        }
    }
}

pub fn fit_propensity(x: &DMatrix<f64>, a: &[f64], model: PropensityModel) -> Result<PropensityFit> {
    let opts = IrlsOptions::default();
    Ok(match model {
        PropensityModel::Logit => PropensityFit::Binary(fit_binary_with_intercept(x, a, Link::Logit, opts)?),
        PropensityModel::Probit => PropensityFit::Binary(fit_binary_with_intercept(x, a, Link::Probit, opts)?),
        PropensityModel::Linear => PropensityFit::Linear(fit_ols_with_intercept(x, a)?),
    })
}

/// Clips to `[eps, 1 − eps]`, returning the counts clipped at each end.
pub fn clip_propensities(p: &mut [f64], eps: f64) -> (usize, usize) {
    let (mut lo, mut hi) = (0, 0);
    for v in p.iter_mut() {
        if *v < eps {
            *v = eps;
            lo += 1;
        } else if *v > 1.0 - eps {
            *v = 1.0 - eps;
            hi += 1;
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    /// Binary when every outcome is 0 or 1, continuous otherwise.
    #[default]
    Auto,
    Continuous,
    Binary,
}

impl OutcomeKind {
    pub fn resolve(self, y: &[f64]) -> OutcomeKind {
        match self {
            OutcomeKind::Auto if y.iter().all(|v| *v == 0.0 || *v == 1.0) => OutcomeKind::Binary,
            OutcomeKind::Auto => OutcomeKind::Continuous,
            k => k,
        }
    }
}

/// A regression of `Y` on a design (intercept added internally).
#[derive(Debug, Clone, PartialEq)]
pub enum Regression {
    Linear(LinearModel),
    Logistic(LogisticModel),
}

impl Regression {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], kind: OutcomeKind) -> Result<Regression> {
        match kind.resolve(y) {
            OutcomeKind::Binary => Ok(Regression::Logistic(fit_binary_with_intercept(
                x,
                y,
                Link::Logit,
                IrlsOptions::default(),
            )?)),
            _ => Ok(Regression::Linear(fit_ols_with_intercept(x, y)?)),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Regression::Linear(m) => m.predict_row(row),
            Regression::Logistic(m) => m.predict_row(row),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            Regression::Linear(m) => m.predict(x),
            Regression::Logistic(m) => m.predict(x),
        }
    }
}

/// Arm-specific conditional means `μ₁(x)`, `μ₀(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeFit {
    PerArm { treated: Regression, control: Regression },
    /// One regression on `(A, X)`.
    Pooled(Regression),
}

impl OutcomeFit {
    pub fn fit(x: &DMatrix<f64>, a: &[f64], y: &[f64], kind: OutcomeKind, pooled: bool) -> Result<OutcomeFit> {
        let kind = kind.resolve(y);
        if pooled {
            let design = DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { a[i] } else { x[(i, j - 1)] });
            return Ok(OutcomeFit::Pooled(Regression::fit(&design, y, kind)?));
        }
        let arm = |t: f64| -> Result<Regression> {
            let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] == t).collect();
            if rows.is_empty() {
                return Err(Error::DegenerateLabels(format!("no rows with treatment {t}")));
            }
            let xa = x.select_rows(&rows);
            let ya: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            Regression::fit(&xa, &ya, kind)
        };
        Ok(OutcomeFit::PerArm { treated: arm(1.0)?, control: arm(0.0)? })
    }

    /// `(μ̂₁(xᵢ), μ̂₀(xᵢ))` for every row.
    pub fn predict(&self, x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        match self {
            OutcomeFit::PerArm { treated, control } => (treated.predict(x), control.predict(x)),
            OutcomeFit::Pooled(m) => {
                let mut row = vec![0.0; x.ncols() + 1];
                let mut mu1 = Vec::with_capacity(x.nrows());
                let mut mu0 = Vec::with_capacity(x.nrows());
                for i in 0..x.nrows() {
                    for j in 0..x.ncols() {
                        row[j + 1] = x[(i, j)];
                    }
                    row[0] = 1.0;
                    mu1.push(m.predict_row(&row));
                    row[0] = 0.0;
                    mu0.push(m.predict_row(&row));
                }
                (mu1, mu0)
            }
        }
    }
}
