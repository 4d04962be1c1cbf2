//! Location-shift model `π₀(Z) = 𝔼[π₀(Z) | X] + ε` with `ε ⫫ X`, used for
//! the conditional log-density derivative in the doubly robust estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_fractional_logit, fit_ols, IrlsOptions, KernelDensityModel, LinearModel, LogisticModel};
use crate::linalg::with_intercept;

const MIN_SIGMA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeanLink {
    /// Logistic-link quasi-likelihood.
    #[default]
    Logit,
    /// Least squares.
    Identity,
}

/// How `∂ log f(p | X)/∂p` is computed from the residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `−ε̂/σ̂²`.
    #[default]
    Normal,
    /// `f̂′/f̂` from a Gaussian kernel density of the residuals.
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LocationShiftOptions {
    pub link: MeanLink,
    pub score: ScoreKind,
}

#[derive(Debug, Clone, PartialEq)]
enum MeanModel {
    Logit(LogisticModel),
    Identity(LinearModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationShiftDensity {
    mean_model: MeanModel,
    pub sigma_eps_hat: f64,
    pub residuals: Vec<f64>,
    pub score_kind: ScoreKind,
    kde: Option<KernelDensityModel>,
}

impl LocationShiftDensity {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    /// Fitted `𝔼[π₀(Z) | X]` for each row of `x`.
    pub fn mean(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let d = with_intercept(x);
        match &self.mean_model {
            MeanModel::Logit(m) => m.predict(&d),
            MeanModel::Identity(m) => m.predict(&d),
        }
    }

    /// `∂ log f(p̂ᵢ | Xᵢ)/∂p` at every fitted row.
    pub fn log_density_derivative(&self) -> Vec<f64> {
        match (&self.score_kind, &self.kde) {
            (ScoreKind::Kernel, Some(kde)) => self
                .residuals
                .iter()
                .map(|&e| {
                    let (f, df) = kde.eval(e);
                    if f > 0.0 {
                        df / f
                    } else {
                        0.0
                    }
                })
                .collect(),
            _ => {
                let s2 = self.sigma_eps_hat * self.sigma_eps_hat;
                self.residuals.iter().map(|e| -e / s2).collect()
            }
        }
    }
}

/// Regresses the fitted propensities on `X` and stores the residuals.
pub fn fit_location_shift(x: &DMatrix<f64>, fitted_p0: &[f64], opts: &LocationShiftOptions) -> Result<LocationShiftDensity> {
    if x.nrows() != fitted_p0.len() {
        return Err(Error::Dimension(format!("{} rows of x for {} propensities", x.nrows(), fitted_p0.len())));
    }
    if let Some(i) = fitted_p0.iter().position(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::Domain(format!("fitted propensity {} at row {i} outside (0, 1)", fitted_p0[i])));
    }
    let d = with_intercept(x);
    let (mean_model, fitted) = match opts.link {
        MeanLink::Logit => {
            let m = fit_fractional_logit(&d, fitted_p0, IrlsOptions::default())?;
            let f = m.predict(&d);
            (MeanModel::Logit(m), f)
        }
        MeanLink::Identity => {
            let m = fit_ols(&d, fitted_p0)?;
            let f = m.predict(&d);
            (MeanModel::Identity(m), f)
        }
    };
    let residuals: Vec<f64> = fitted_p0.iter().zip(&fitted).map(|(p, f)| p - f).collect();
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let sigma = (residuals.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sigma >= MIN_SIGMA) {
        return Err(Error::DegenerateDensity { sigma });
    }
    let kde = match opts.score {
        ScoreKind::Kernel => Some(KernelDensityModel::with_silverman(&residuals)?),
        ScoreKind::Normal => None,
    };
    Ok(LocationShiftDensity { mean_model, sigma_eps_hat: sigma, residuals, score_kind: opts.score, kde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::special::logistic;
    use rand_distr::{Distribution, Normal};

    fn sample(n: usize, sd: f64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = stream(3, 0, 0);
        let noise = Normal::new(0.0, sd).unwrap();
        let x = DMatrix::from_fn(n, 1, |i, _| (i % 50) as f64 / 50.0 - 0.5);
        let p = (0..n).map(|i| logistic(0.3 * x[(i, 0)]) + noise.sample(&mut rng)).collect();
        (x, p)
    }

    #[test]
    fn recovers_noise_scale() {
        let (x, p) = sample(5000, 0.1);
        let d = fit_location_shift(&x, &p, &LocationShiftOptions::default()).unwrap();
        assert!((d.sigma_eps_hat - 0.1).abs() < 0.01, "{}", d.sigma_eps_hat);
        let mean = d.residuals.iter().sum::<f64>() / d.n() as f64;
        assert!(mean.abs() < 1e-8);
    }

    #[test]
    fn deterministic_propensity_is_degenerate() {
        let x = DMatrix::from_fn(200, 1, |i, _| i as f64 / 200.0);
        let p: Vec<f64> = (0..200).map(|i| logistic(0.5 + x[(i, 0)])).collect();
        let err = fit_location_shift(&x, &p, &LocationShiftOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateDensity { .. }));
    }

    #[test]
    fn kernel_score_tracks_normal_score() {
        let (x, p) = sample(5000, 0.1);
        let opts = LocationShiftOptions { link: MeanLink::Identity, score: ScoreKind::Kernel };
        let k = fit_location_shift(&x, &p, &opts).unwrap();
        let nrm = fit_location_shift(&x, &p, &LocationShiftOptions { score: ScoreKind::Normal, ..opts }).unwrap();
        let (a, b) = (k.log_density_derivative(), nrm.log_density_derivative());
        let central: Vec<usize> = (0..k.n()).filter(|&i| k.residuals[i].abs() < 0.1).collect();
        let err = central.iter().map(|&i| (a[i] - b[i]).abs()).sum::<f64>() / central.len() as f64;
        assert!(err < 2.0, "{err}");
    }
}
