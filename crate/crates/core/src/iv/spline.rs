//! Natural cubic interpolating spline with an exact antiderivative.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    /// Per segment: `a + b t + c t² + d t³` with `t = x − knots[k]`.
    coef: Vec<[f64; 4]>,
    /// `∫_{knots[0]}^{knots[k]}` of the spline.
    cumulative: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("spline needs >= 3 strictly increasing knots".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        // Second derivatives M with M₀ = M_{n−1} = 0 via the Thomas algorithm.
        let mut m = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        for i in 2..n - 1 {
            let w = h[i - 1] / diag[i - 1];
            diag[i] -= w * h[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (1..n - 1).rev() {
            m[i] = (rhs[i] - if i + 1 < n - 1 { h[i] * m[i + 1] } else { 0.0 }) / diag[i];
        }
        let coef: Vec<[f64; 4]> = (0..n - 1)
            .map(|k| {
                let b = (y[k + 1] - y[k]) / h[k] - h[k] * (2.0 * m[k] + m[k + 1]) / 6.0;
                [y[k], b, 0.5 * m[k], (m[k + 1] - m[k]) / (6.0 * h[k])]
            })
            .collect();
        let mut cumulative = vec![0.0; n];
        for k in 0..n - 1 {
            cumulative[k + 1] = cumulative[k] + segment_integral(&coef[k], h[k]);
        }
        Ok(CubicSpline { knots: x.to_vec(), coef, cumulative })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    fn segment(&self, x: f64) -> usize {
        self.knots.partition_point(|&k| k <= x).clamp(1, self.knots.len() - 1) - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        let t = x - self.knots[k];
        let c = &self.coef[k];
        c[0] + t * (c[1] + t * (c[2] + t * c[3]))
    }

    /// `∫_{knots[0]}^{x}` of the spline.
    pub fn integral(&self, x: f64) -> f64 {
        let k = self.segment(x);
        self.cumulative[k] + segment_integral(&self.coef[k], x - self.knots[k])
    }
}

fn segment_integral(c: &[f64; 4], t: f64) -> f64 {
    t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)))
}
