//! Estimation when treatment is instrumented and selection follows a latent
//! index: marginal treatment effect models and the IE/MIE estimators built
//! on them.

mod location_shift;
mod normal;
mod semiparametric;
mod spline;

pub use location_shift::{fit_location_shift, LocationShiftDensity, LocationShiftOptions, MeanLink, ScoreKind};
pub use normal::{
    fit_normal_switching_mle, mte_normal, switching_log_likelihood, MleOptions, RoySwitchingModel, SwitchingParams,
};
pub use semiparametric::{fit_semiparametric_liv, SemiparamMTEFit, SemiparametricOptions};
pub use spline::CubicSpline;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{Dataset, EstimandKind, EstimateReport, Regime};
use crate::error::{Error, Result};
use crate::inference::eif_variance;
use crate::interventions::InterventionFamily;
use crate::nuisance::{clip_propensities, PROPENSITY_CLIP};
use crate::quadrature::integrate;

/// Rows listed in a support error.
const SUPPORT_ROWS_SHOWN: usize = 20;
/// Slack allowed when comparing interval ends against the support.
const SUPPORT_SLACK: f64 = 1e-12;

/// A fitted marginal treatment effect surface `MTE(x, u)` together with the
/// propensity model it was estimated with.
pub trait MteModel: Sync {
    fn method(&self) -> &'static str;

    fn mte(&self, x: &[f64], u: f64) -> Result<f64>;

    /// `∫ₐᵇ MTE(x, u) du`.
    fn mte_integral(&self, x: &[f64], a: f64, b: f64) -> Result<f64> {
        let failure = std::cell::RefCell::new(None);
        let v = integrate(
            |u| match self.mte(x, u) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            a,
            b,
            1e-8,
        );
        match failure.into_inner() {
            Some(e) => Err(e),
            None => v,
        }
    }

    /// Unclipped fitted `π₀(z)` for each row of `z`.
    fn propensity(&self, z: &DMatrix<f64>) -> Vec<f64>;

    /// Interval of `u` on which `mte` is evaluable.
    fn support(&self) -> (f64, f64);

    /// `𝔼[Y | X = x, π₀(Z) = p]`, whose `p`-derivative is `MTE(x, p)`.
    fn conditional_mean(&self, x: &[f64], p: f64) -> Result<f64>;
}

fn label(kind: EstimandKind, family: &InterventionFamily) -> String {
    format!("{kind} {}", family.name())
}

/// Fitted propensities clipped away from 0 and 1.
pub fn fitted_propensities(model: &dyn MteModel, data: &Dataset) -> Result<Vec<f64>> {
    let z = data.ensure_instruments()?;
    let mut p = model.propensity(z);
    clip_propensities(&mut p, PROPENSITY_CLIP);
    Ok(p)
}

fn per_row<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

fn lambda_weights(family: &InterventionFamily, p: &[f64]) -> Result<(Vec<f64>, f64)> {
    let lam: Vec<f64> = p.iter().map(|&v| family.lambda(v)).collect::<Result<_>>()?;
    let n = lam.len() as f64;
    let sum: f64 = lam.iter().sum();
    let threshold = 1e-10 * n;
    if !(sum.abs() >= threshold) {
        return Err(Error::DegenerateWeights { sum, threshold });
    }
    Ok((lam, sum / n))
}

/// Plug-in MIE: `(1/n) Σ λ(p̂ᵢ)/mean(λ) · MTE(Xᵢ, p̂ᵢ)`.
pub fn estimate_mie_plugin(model: &dyn MteModel, data: &Dataset, family: &InterventionFamily) -> Result<EstimateReport> {
    let p = fitted_propensities(model, data)?;
    let (lam, mean_lam) = lambda_weights(family, &p)?;
    let mte = per_row(data.n(), |i| model.mte(&data.x_row(i), p[i]))?;
    let n = data.n() as f64;
    let point = lam.iter().zip(&mte).map(|(l, m)| l * m).sum::<f64>() / (n * mean_lam);
    Ok(EstimateReport::new(label(EstimandKind::mie(Regime::IvLatentIndex), family), "plugin", point, data.n())
        .diag("mean_lambda", mean_lam))
}

/// `Σ ∫_{p̂ᵢ}^{π_δ(p̂ᵢ)} MTE(Xᵢ, u) du / Σ (π_δ(p̂ᵢ) − p̂ᵢ)`.
pub fn estimate_ie_mte(
    model: &dyn MteModel,
    data: &Dataset,
    family: &InterventionFamily,
    delta: f64,
) -> Result<EstimateReport> {
    let kind = EstimandKind::ie(delta, Regime::IvLatentIndex)?;
    let p = fitted_propensities(model, data)?;
    let target: Vec<f64> = p.iter().map(|&v| family.pi_delta(v, delta)).collect::<Result<_>>()?;
    let (lo, hi) = model.support();
    let outside: Vec<usize> = (0..p.len())
        .filter(|&i| {
            let (a, b) = (p[i].min(target[i]), p[i].max(target[i]));
            a < lo - SUPPORT_SLACK || b > hi + SUPPORT_SLACK
        })
        .collect();
    if !outside.is_empty() {
        let mut rows = outside;
        rows.truncate(SUPPORT_ROWS_SHOWN);
        return Err(Error::Support { low: lo, high: hi, rows });
    }
    let integrals = per_row(data.n(), |i| {
        let b = target[i].clamp(lo, hi);
        model.mte_integral(&data.x_row(i), p[i], b)
    })?;
    let den: f64 = target.iter().zip(&p).map(|(t, v)| t - v).sum();
    let threshold = 1e-10 * p.len() as f64;
    if !(den.abs() >= threshold) {
        return Err(Error::DegenerateWeights { sum: den, threshold });
    }
    let point = integrals.iter().sum::<f64>() / den;
    Ok(EstimateReport::new(label(kind, family), model.method(), point, data.n()))
}

/// Doubly robust MIE: `(1/n) Σ { wᵢ MTE(Xᵢ, p̂ᵢ) + l̂ᵢ (Yᵢ − m̂ᵢ) }` with
/// `wᵢ = λ(p̂ᵢ)/mean(λ)`, `m̂ᵢ = 𝔼̂[Y | Xᵢ, p̂ᵢ]` and
/// `l̂ᵢ = −λ′(p̂ᵢ)/mean(λ) − wᵢ ∂log f(p̂ᵢ | Xᵢ)/∂p`.
pub fn estimate_mie_doubly_robust(
    model: &dyn MteModel,
    data: &Dataset,
    family: &InterventionFamily,
    density: &LocationShiftDensity,
) -> Result<EstimateReport> {
    if density.n() != data.n() {
        return Err(Error::Dimension(format!("density fitted on {} rows, data has {}", density.n(), data.n())));
    }
    let p = fitted_propensities(model, data)?;
    let (lam, mean_lam) = lambda_weights(family, &p)?;
    let lam_prime: Vec<f64> = p.iter().map(|&v| family.lambda_prime(v)).collect::<Result<_>>()?;
    let score = density.log_density_derivative();
    let y = data.y();
    let terms = per_row(data.n(), |i| {
        let x = data.x_row(i);
        let w = lam[i] / mean_lam;
        let mte = model.mte(&x, p[i])?;
        let m = model.conditional_mean(&x, p[i])?;
        let l = -lam_prime[i] / mean_lam - w * score[i];
        Ok((w, mte, l * (y[i] - m)))
    })?;
    let n = data.n() as f64;
    let plugin = terms.iter().map(|t| t.0 * t.1).sum::<f64>() / n;
    let correction = terms.iter().map(|t| t.2).sum::<f64>() / n;
    let point = plugin + correction;
    let eif: Vec<f64> = terms.iter().map(|&(w, mte, c)| w * (mte - point) + c - correction).collect();
    Ok(EstimateReport::new(label(EstimandKind::mie(Regime::IvLatentIndex), family), "doubly-robust", point, data.n())
        .with_std_error(eif_variance(&eif))
        .diag("plugin", plugin)
        .diag("correction", correction))
}
