use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd_with_ridge, with_intercept};
use crate::special::{inverse_mills, logistic, normal_cdf, normal_log_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Probit,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => logistic(eta),
            Link::Probit => normal_cdf(eta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Maximum relative coefficient change, `|Δβ| / max(1, |β|)`.
    pub tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions { max_iter: 100, tol: 1e-8 }
    }
}

/// Fitted binary-response GLM (logit or probit link).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    pub link: Link,
    pub intercept: bool,
    /// Set when the weighted Gram matrix needed the ridge fallback.
    pub ridge_used: bool,
    /// Inverse Fisher information at the final iterate.
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
}

impl LogisticModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        let (b0, rest) = if self.intercept {
            (self.coefficients[0], &self.coefficients[1..])
        } else {
            (0.0, &self.coefficients[..])
        };
        b0 + rest.iter().zip(row).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.link.inverse(self.linear_predictor(row))
    }

    /// Fitted probabilities for each row of `x` (raw covariates when the model
    /// carries an intercept, the full design otherwise).
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

    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|j| c[(j, j)].max(0.0).sqrt()).collect())
    }
}

/// Logistic regression of binary `labels` on `design` by IRLS.
pub fn fit_logistic_irls(design: &DMatrix<f64>, labels: &[f64], opts: IrlsOptions) -> Result<LogisticModel> {
    check_binary(labels)?;
    irls(design, labels, Link::Logit, opts)
}

/// Probit regression by Fisher scoring.
pub fn fit_probit(design: &DMatrix<f64>, labels: &[f64], opts: IrlsOptions) -> Result<LogisticModel> {
    check_binary(labels)?;
    irls(design, labels, Link::Probit, opts)
}

/// Logistic-link quasi-likelihood regression for targets in `[0, 1]`.
pub fn fit_fractional_logit(design: &DMatrix<f64>, targets: &[f64], opts: IrlsOptions) -> Result<LogisticModel> {
    if let Some(i) = targets.iter().position(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::Domain(format!("target {} at row {i} outside [0, 1]", targets[i])));
    }
    irls(design, targets, Link::Logit, opts)
}

/// Adds an intercept column, fits, and marks the model accordingly.
pub fn fit_binary_with_intercept(x: &DMatrix<f64>, labels: &[f64], link: Link, opts: IrlsOptions) -> Result<LogisticModel> {
    let d = with_intercept(x);
    let mut m = match link {
        Link::Logit => fit_logistic_irls(&d, labels, opts)?,
        Link::Probit => fit_probit(&d, labels, opts)?,
    };
    m.intercept = true;
    Ok(m)
}

fn check_binary(labels: &[f64]) -> Result<()> {
    if let Some(i) = labels.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!("label {} at row {i} is not 0/1", labels[i])));
    }
    let ones = labels.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::DegenerateLabels(format!("all {} labels equal", labels.len())));
    }
    Ok(())
}

/// Per-row log-likelihood, working weight and score residual.
fn row_terms(link: Link, eta: f64, y: f64) -> (f64, f64, f64) {
    match link {
        Link::Logit => {
            let p = logistic(eta);
            // log-likelihood y·η − log(1 + e^η), stable form
            let ll = y * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p());
            (ll, p * (1.0 - p), y - p)
        }
        Link::Probit => {
            let lp = normal_log_cdf(eta);
            let lq = normal_log_cdf(-eta);
            let ll = y * lp + (1.0 - y) * lq;
            // score: y·φ/Φ − (1−y)·φ/(1−Φ); Fisher weight φ²/(Φ(1−Φ))
            let m1 = inverse_mills(eta);
            let m0 = inverse_mills(-eta);
            let score = y * m1 - (1.0 - y) * m0;
            (ll, m1 * m0, score)
        }
    }
}

fn irls(design: &DMatrix<f64>, y: &[f64], link: Link, opts: IrlsOptions) -> Result<LogisticModel> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("labels have {} rows, design {n}", y.len())));
    }
    if n < p {
        return Err(Error::RankDeficient { column: n });
    }
    // full-rank check up front so rank problems are named, not ridged away
    let qr = crate::linalg::PivotedQr::new(design.clone());
    if let Some(column) = qr.dependent_column() {
        return Err(Error::RankDeficient { column });
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut ridge_used = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    let mut growing = 0usize;

    let loglik = |b: &DVector<f64>| -> f64 {
        let eta = design * b;
        (0..n).map(|i| row_terms(link, eta[i], y[i]).0).sum()
    };
    let mut ll = loglik(&beta);

    while iterations < opts.max_iter {
        iterations += 1;
        let eta = design * &beta;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        for i in 0..n {
            let (_, w, r) = row_terms(link, eta[i], y[i]);
            let row = design.row(i);
            for a in 0..p {
                let xa = row[a];
                score[a] += xa * r;
                let wxa = w * xa;
                for b in 0..=a {
                    gram[(a, b)] += wxa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let Some((step, ridged)) = solve_spd_with_ridge(&gram, &score, 1e-10) else {
            return Err(Error::Separation { iterations });
        };
        ridge_used |= ridged;

        // step halving keeps the log-likelihood nondecreasing
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = loglik(&candidate);
        let mut halvings = 0;
        while !(cand_ll >= ll - 1e-12 * ll.abs().max(1.0)) && halvings < 30 {
            t *= 0.5;
            candidate = &beta + &step * t;
            cand_ll = loglik(&candidate);
            halvings += 1;
        }
        let rel_change = (0..p)
            .map(|j| (candidate[j] - beta[j]).abs() / beta[j].abs().max(1.0))
            .fold(0.0, f64::max);
        let step_norm = (&candidate - &beta).norm();
        beta = candidate;
        ll = cand_ll;
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::Separation { iterations });
        }
        if rel_change < opts.tol {
            converged = true;
            break;
        }

        // separation: every fitted probability pinned and steps diverging
        let eta = design * &beta;
        let pinned = (0..n).all(|i| {
            let q = link.inverse(eta[i]);
            !(1e-10..=1.0 - 1e-10).contains(&q)
        });
        if step_norm > last_step {
            growing += 1;
        } else {
            growing = 0;
        }
        last_step = step_norm;
        if pinned && (growing >= 2 || beta.amax() > 50.0) {
            return Err(Error::Separation { iterations });
        }
    }

    // final Fisher information
    let eta = design * &beta;
    let mut info = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let (_, w, _) = row_terms(link, eta[i], y[i]);
        let row = design.row(i);
        for a in 0..p {
            for b in 0..p {
                info[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    Ok(LogisticModel {
        coefficients: beta.iter().copied().collect(),
        converged,
        n_iterations: iterations,
        link,
        intercept: false,
        ridge_used,
        covariance: info.try_inverse(),
    })
}
