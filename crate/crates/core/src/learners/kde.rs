use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::normal_pdf;

use super::bandwidth::silverman;

const WINDOW: f64 = 8.0;

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDensityModel {
    sample: Vec<f64>,
    bandwidth: f64,
}

impl KernelDensityModel {
    pub fn new(sample: &[f64], bandwidth: f64) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::Domain("kernel density needs at least 2 sample points".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(KernelDensityModel { sample: s, bandwidth })
    }

    pub fn with_silverman(sample: &[f64]) -> Result<Self> {
        Self::new(sample, silverman(sample)?)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density and its derivative at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let h = self.bandwidth;
        let lo = self.sample.partition_point(|&s| s < t - WINDOW * h);
        let hi = self.sample.partition_point(|&s| s <= t + WINDOW * h);
        let (mut f, mut df) = (0.0, 0.0);
        for &s in &self.sample[lo..hi] {
            let u = (t - s) / h;
            let k = normal_pdf(u);
            f += k;
            df -= u * k;
        }
        let n = self.sample.len() as f64;
        (f / (n * h), df / (n * h * h))
    }
}

/// Density `φ̂` and derivative `φ̂′` at each point.
pub fn kernel_density_derivative(model: &KernelDensityModel, points: &[f64]) -> (Vec<f64>, Vec<f64>) {
    points.iter().map(|&t| model.eval(t)).unzip()
}
