use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{with_intercept, PivotedQr};

/// Fitted linear regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// One coefficient per design column; the intercept comes first when
    /// `intercept` is set.
    pub coefficients: Vec<f64>,
    pub residual_variance: f64,
    pub intercept: bool,
}

impl LinearModel {
    /// Prediction for a row of the raw covariates (intercept added here when
    /// the model carries one).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let (b0, rest) = if self.intercept {
            (self.coefficients[0], &self.coefficients[1..])
        } else {
            (0.0, &self.coefficients[..])
        };
        b0 + rest.iter().zip(row).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                self.predict_row(&row)
            })
            .collect()
    }
}

/// Ordinary least squares on the design exactly as given.
pub fn fit_ols(design: &DMatrix<f64>, response: &[f64]) -> Result<LinearModel> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::Dimension(format!("response has {} rows, design {n}", response.len())));
    }
    if n < p {
        return Err(Error::RankDeficient { column: n });
    }
    let b = DVector::from_column_slice(response);
    let beta = PivotedQr::new(design.clone()).solve(&b)?;
    let resid = &b - design * &beta;
    let rss = resid.norm_squared();
    let dof = n.saturating_sub(p);
    Ok(LinearModel {
        coefficients: beta.iter().copied().collect(),
        residual_variance: if dof > 0 { rss / dof as f64 } else { 0.0 },
        intercept: false,
    })
}

/// OLS of `response` on `[1, x]`.
pub fn fit_ols_with_intercept(x: &DMatrix<f64>, response: &[f64]) -> Result<LinearModel> {
    let mut m = fit_ols(&with_intercept(x), response)?;
    m.intercept = true;
    Ok(m)
}

/// Classical standard errors `sqrt(σ² diag((XᵀX)⁻¹))` for a model fit on `design`.
pub fn ols_standard_errors(design: &DMatrix<f64>, model: &LinearModel) -> Option<Vec<f64>> {
    let xtx = design.transpose() * design;
    let inv = xtx.try_inverse()?;
    Some((0..inv.nrows()).map(|j| (model.residual_variance * inv[(j, j)]).sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_two_points() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let m = fit_ols(&d, &[0.0, 1.0]).unwrap();
        assert!(m.coefficients[0].abs() < 1e-14);
        assert!((m.coefficients[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_response() {
        let x = DMatrix::from_fn(20, 2, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let m = fit_ols_with_intercept(&x, &[4.25; 20]).unwrap();
        assert!((m.coefficients[0] - 4.25).abs() < 1e-12);
        assert!(m.coefficients[1].abs() < 1e-12 && m.coefficients[2].abs() < 1e-12);
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let x = DMatrix::from_fn(40, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin());
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.11).cos() * 3.0).collect();
        let d = with_intercept(&x);
        let m = fit_ols(&d, &y).unwrap();
        let fitted = d.clone() * DVector::from_vec(m.coefficients.clone());
        for j in 0..d.ncols() {
            let dot: f64 = (0..40).map(|i| d[(i, j)] * (y[i] - fitted[i])).sum();
            let scale: f64 = d.column(j).norm() * DVector::from_vec(y.clone()).norm();
            assert!(dot.abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn rank_deficiency_names_column() {
        let d = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64,
        });
        let err = fit_ols(&d, &[1.0; 10]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { column: 1 | 2 }));
    }
}
