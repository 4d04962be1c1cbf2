//! Rule-of-thumb bandwidth selectors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::ols::fit_ols;

/// Silverman's rule: `0.9 · min(sd, IQR/1.34) · n^(-1/5)`.
pub fn silverman(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Domain("bandwidth needs at least 2 points".into()));
    }
    let sd = std_dev(x);
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Domain("running variable has no spread".into()));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Rule-of-thumb bandwidth for the first derivative from a local quadratic
/// fit with a Gaussian kernel.
///
/// A global quintic pilot supplies `σ̃²` and `m‴`; the bandwidth is
/// `C · [σ̃² · L / Σ m‴(xᵢ)² 1{xᵢ ∈ I}]^(1/7)` where `I` is the central 90%
/// of the inputs with length `L` and `C ≈ 0.884` is the kernel constant.
pub fn derivative_rule_of_thumb(x: &[f64], y: &[f64]) -> Result<f64> {
    const C_GAUSS_D1_P2: f64 = 0.8843;
    let n = x.len();
    if n < 12 || y.len() != n {
        return Err(Error::Domain("derivative bandwidth needs at least 12 paired points".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile_sorted(&s, 0.05), quantile_sorted(&s, 0.95));
    let center = 0.5 * (s[0] + s[n - 1]);
    let scale = 0.5 * (s[n - 1] - s[0]);
    if !(scale > 0.0) {
        return Err(Error::Domain("running variable has no spread".into()));
    }
    let design = DMatrix::from_fn(n, 6, |i, j| ((x[i] - center) / scale).powi(j as i32));
    let pilot = fit_ols(&design, y)?;
    let a = &pilot.coefficients;
    let third = |t: f64| {
        let u = (t - center) / scale;
        (6.0 * a[3] + 24.0 * a[4] * u + 60.0 * a[5] * u * u) / scale.powi(3)
    };
    let curvature: f64 = x.iter().filter(|&&t| t >= lo && t <= hi).map(|&t| third(t).powi(2)).sum();
    if !(curvature > 0.0) {
        return Err(Error::Domain("pilot fit has no curvature".into()));
    }
    let h = C_GAUSS_D1_P2 * (pilot.residual_variance * (hi - lo) / curvature).powf(1.0 / 7.0);
    Ok(h)
}

pub(crate) fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let n = s.len();
    if n == 1 {
        return s[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}
