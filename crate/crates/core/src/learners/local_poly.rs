//! Gaussian-kernel local polynomial regression of degree 1 or 2.
//!
//! Training inputs are kept sorted so each evaluation only visits points
//! within `WINDOW` bandwidths; beyond that the Gaussian weight is below
//! `exp(-32)` relative to the peak.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WINDOW: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Gaussian,
}

/// A local polynomial smoother over one running variable and one or more
/// responses sharing the same kernel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPolyFit {
    degree: usize,
    bandwidth: f64,
    kernel: Kernel,
    xs: Vec<f64>,
    /// `responses[r][i]` pairs with `xs[i]`.
    responses: Vec<Vec<f64>>,
}

/// Values and (first) derivatives at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPolyEval {
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

impl LocalPolyFit {
    pub fn new(xs: &[f64], ys: &[f64], degree: usize, bandwidth: f64) -> Result<Self> {
        Self::multi(xs, &[ys], degree, bandwidth)
    }

    /// One smoother for several responses over the same inputs.
    pub fn multi(xs: &[f64], responses: &[&[f64]], degree: usize, bandwidth: f64) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::Domain(format!("local polynomial degree must be 1 or 2, got {degree}")));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if responses.iter().any(|r| r.len() != xs.len()) {
            return Err(Error::Dimension("response length differs from running variable".into()));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite running variable".into()));
        }
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]).then(i.cmp(&j)));
        Ok(LocalPolyFit {
            degree,
            bandwidth,
            kernel: Kernel::Gaussian,
            xs: order.iter().map(|&i| xs[i]).collect(),
            responses: responses.iter().map(|r| order.iter().map(|&i| r[i]).collect()).collect(),
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }
    pub fn n_responses(&self) -> usize {
        self.responses.len()
    }
    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Local coefficients at `point` for every response: `(value, derivative)`.
    pub fn eval_point(&self, point: f64) -> Result<Vec<(f64, f64)>> {
        let h = self.bandwidth;
        let lo = self.xs.partition_point(|&x| x < point - WINDOW * h);
        let hi = self.xs.partition_point(|&x| x <= point + WINDOW * h);
        let q = self.degree + 1;

        let mut distinct = 0usize;
        let mut prev = f64::NAN;
        for &x in &self.xs[lo..hi] {
            if x != prev {
                distinct += 1;
                prev = x;
                if distinct >= q {
                    break;
                }
            }
        }
        if distinct < q {
            return Err(Error::EffectiveSample { point, distinct, needed: q });
        }

        let nr = self.responses.len();
        let mut moments = [0.0f64; 5];
        let mut cross = vec![[0.0f64; 3]; nr];
        for i in lo..hi {
            let u = (self.xs[i] - point) / h;
            let w = (-0.5 * u * u).exp();
            let mut uk = w;
            for m in moments.iter_mut().take(2 * self.degree + 1) {
                *m += uk;
                uk *= u;
            }
            for (r, c) in cross.iter_mut().enumerate() {
                let wy = w * self.responses[r][i];
                c[0] += wy;
                c[1] += wy * u;
                if self.degree == 2 {
                    c[2] += wy * u * u;
                }
            }
        }
        let gram = DMatrix::from_fn(q, q, |a, b| moments[a + b]);
        let lu = gram.lu();
        let mut out = Vec::with_capacity(nr);
        for c in &cross {
            let rhs = DVector::from_fn(q, |a, _| c[a]);
            let coef = lu
                .solve(&rhs)
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or(Error::EffectiveSample { point, distinct, needed: q })?;
            out.push((coef[0], coef[1] / h));
        }
        Ok(out)
    }

    /// Evaluates response `r` at `points`.
    pub fn eval_response(&self, r: usize, points: &[f64]) -> Result<LocalPolyEval> {
        let res: Result<Vec<(f64, f64)>> = points
            .par_iter()
            .map(|&p| self.eval_point(p).map(|v| v[r]))
            .collect();
        let res = res?;
        Ok(LocalPolyEval {
            values: res.iter().map(|v| v.0).collect(),
            derivatives: res.iter().map(|v| v.1).collect(),
        })
    }

    /// Evaluates every response at `points`; `out[r]` belongs to response `r`.
    pub fn eval_all(&self, points: &[f64]) -> Result<Vec<LocalPolyEval>> {
        let res: Result<Vec<Vec<(f64, f64)>>> = points.par_iter().map(|&p| self.eval_point(p)).collect();
        let res = res?;
        Ok((0..self.responses.len())
            .map(|r| LocalPolyEval {
                values: res.iter().map(|v| v[r].0).collect(),
                derivatives: res.iter().map(|v| v[r].1).collect(),
            })
            .collect())
    }
}

/// Evaluates the first response of `fit` at `points`.
pub fn local_poly_eval(fit: &LocalPolyFit, points: &[f64]) -> Result<LocalPolyEval> {
    fit.eval_response(0, points)
}
