//! Semiparametric local-IV fit of `𝔼[Y | X, p] = β₀ᵀX + (β₁−β₀)ᵀX·p + K(p)`.
//!
//! 1. propensity `p̂` from `Z`;
//! 2. local-linear residuals of `Y`, `X` and `X·p̂` on `p̂` (smoothers are
//!    evaluated on a grid of spacing `h/20` and spline-interpolated);
//! 3. no-intercept least squares of `e_Y` on `(e_X, e_{Xp̂})`;
//! 4. local-quadratic fit of `e*_Y = Y − β̂₀ᵀX − (β̂₁−β̂₀)ᵀX·p̂` on `p̂`.
//!
//! `K̂′` is the step-4 slope evaluated on a dense grid and interpolated by a
//! natural cubic spline; `K̂` is its exact antiderivative, shifted so that
//! `mean(K̂(p̂ᵢ)) = mean(e*_Y)`. Constant columns of `X` and the arm
//! intercepts are absorbed into `K`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::spline::CubicSpline;
use super::MteModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{derivative_rule_of_thumb, fit_ols, silverman, LocalPolyFit};
use crate::nuisance::{clip_propensities, fit_propensity, PropensityFit, PropensityModel, PROPENSITY_CLIP};

const MIN_SUPPORT_WIDTH: f64 = 0.05;
const MIN_GRID: usize = 401;
const STEP2_GRID_PER_BANDWIDTH: f64 = 20.0;
const STEP4_GRID_PER_BANDWIDTH: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiparametricOptions {
    pub propensity: PropensityModel,
    /// Step 2 bandwidth; Silverman's rule on `p̂` when absent.
    pub step2_bandwidth: Option<f64>,
    /// Step 4 bandwidth; derivative rule of thumb when absent.
    pub step4_bandwidth: Option<f64>,
    /// Columns of `X` that enter the `X·p` interaction; all when absent.
    pub interaction_columns: Option<Vec<usize>>,
}

impl Default for SemiparametricOptions {
    fn default() -> Self {
        SemiparametricOptions {
            propensity: PropensityModel::Logit,
            step2_bandwidth: None,
            step4_bandwidth: None,
            interaction_columns: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemiparamMTEFit {
    pub propensity: PropensityFit,
    /// One entry per column of `X`; zero for absorbed columns.
    pub beta0_hat: Vec<f64>,
    pub beta_diff_hat: Vec<f64>,
    /// Step 4 smoother.
    pub kprime: LocalPolyFit,
    kprime_spline: CubicSpline,
    k_offset: f64,
    /// Observed range of `p̂`.
    pub support: (f64, f64),
    pub step2_bandwidth: f64,
    pub step4_bandwidth: f64,
    pub fitted_p0: Vec<f64>,
}

impl SemiparamMTEFit {
    /// `K̂′(p)`.
    pub fn k_prime(&self, p: f64) -> Result<f64> {
        self.check(p)?;
        Ok(self.kprime_spline.eval(p))
    }

    /// `K̂(p)`.
    pub fn k(&self, p: f64) -> Result<f64> {
        self.check(p)?;
        Ok(self.k_offset + self.kprime_spline.integral(p))
    }

    fn check(&self, p: f64) -> Result<()> {
        let (lo, hi) = self.support;
        if p >= lo && p <= hi {
            Ok(())
        } else {
            Err(Error::Domain(format!("p = {p} outside the fitted support [{lo}, {hi}]")))
        }
    }

    fn dot(b: &[f64], x: &[f64]) -> f64 {
        b.iter().zip(x).map(|(a, v)| a * v).sum()
    }
}

impl MteModel for SemiparamMTEFit {
    fn method(&self) -> &'static str {
        "semiparametric"
    }

    fn mte(&self, x: &[f64], u: f64) -> Result<f64> {
        Ok(Self::dot(&self.beta_diff_hat, x) + self.k_prime(u)?)
    }

    fn mte_integral(&self, x: &[f64], a: f64, b: f64) -> Result<f64> {
        Ok(Self::dot(&self.beta_diff_hat, x) * (b - a) + self.k(b)? - self.k(a)?)
    }

    fn propensity(&self, z: &DMatrix<f64>) -> Vec<f64> {
        self.propensity.predict(z)
    }

    fn support(&self) -> (f64, f64) {
        self.support
    }

    fn conditional_mean(&self, x: &[f64], p: f64) -> Result<f64> {
        Ok(Self::dot(&self.beta0_hat, x) + Self::dot(&self.beta_diff_hat, x) * p + self.k(p)?)
    }
}

/// Equally spaced points over `[lo, hi]` with spacing at most `h / per_h`.
fn grid(lo: f64, hi: f64, h: f64, per_h: f64) -> Vec<f64> {
    let m = MIN_GRID.max(((hi - lo) * per_h / h).ceil() as usize + 1);
    (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
}

pub fn fit_semiparametric_liv(data: &Dataset, opts: &SemiparametricOptions) -> Result<SemiparamMTEFit> {
    data.ensure_valid()?;
    let z = data.ensure_instruments()?;
    let x = data.x();
    let (n, d) = (data.n(), x.ncols());
    let y = data.y();

    // Step 1.
    let propensity = fit_propensity(z, data.a(), opts.propensity)?;
    let mut p = propensity.predict(z);
    clip_propensities(&mut p, PROPENSITY_CLIP);
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < MIN_SUPPORT_WIDTH {
        return Err(Error::NarrowSupport { low: lo, high: hi, min_width: MIN_SUPPORT_WIDTH });
    }

    // Step 2.
    let varying: Vec<usize> = (0..d).filter(|&j| (1..n).any(|i| x[(i, j)] != x[(0, j)])).collect();
    let interacted: Vec<usize> = match &opts.interaction_columns {
        Some(cols) => {
            if let Some(&c) = cols.iter().find(|&&c| c >= d) {
                return Err(Error::Spec(format!("interaction column {c} out of range for {d} covariates")));
            }
            varying.iter().copied().filter(|j| cols.contains(j)).collect()
        }
        None => varying.clone(),
    };
    let h2 = match opts.step2_bandwidth {
        Some(h) => h,
        None => silverman(&p)?,
    };
    let mut columns: Vec<Vec<f64>> = vec![y.to_vec()];
    columns.extend(varying.iter().map(|&j| (0..n).map(|i| x[(i, j)]).collect()));
    columns.extend(interacted.iter().map(|&j| (0..n).map(|i| x[(i, j)] * p[i]).collect()));
    let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    let grid2 = grid(lo, hi, h2, STEP2_GRID_PER_BANDWIDTH);
    let smooth = LocalPolyFit::multi(&p, &refs, 1, h2)?.eval_all(&grid2)?;
    let resid: Vec<Vec<f64>> = columns
        .iter()
        .zip(&smooth)
        .map(|(c, s)| {
            let fitted = CubicSpline::natural(&grid2, &s.values)?;
            Ok(c.iter().zip(&p).map(|(a, &v)| a - fitted.eval(v)).collect())
        })
        .collect::<Result<_>>()?;

    // Step 3.
    let (k0, k1) = (varying.len(), interacted.len());
    let mut beta0_hat = vec![0.0; d];
    let mut beta_diff_hat = vec![0.0; d];
    if k0 + k1 > 0 {
        let design = DMatrix::from_fn(n, k0 + k1, |i, j| resid[j + 1][i]);
        let ols = fit_ols(&design, &resid[0])?;
        for (c, &j) in varying.iter().enumerate() {
            beta0_hat[j] = ols.coefficients[c];
        }
        for (c, &j) in interacted.iter().enumerate() {
            beta_diff_hat[j] = ols.coefficients[k0 + c];
        }
    }
    let e_star: Vec<f64> = (0..n)
        .map(|i| {
            let xi = data.x_row(i);
            y[i] - SemiparamMTEFit::dot(&beta0_hat, &xi) - SemiparamMTEFit::dot(&beta_diff_hat, &xi) * p[i]
        })
        .collect();

    // Step 4.
    let h4 = match opts.step4_bandwidth {
        Some(h) => h,
        None => derivative_rule_of_thumb(&p, &e_star)?,
    };
    let kprime = LocalPolyFit::new(&p, &e_star, 2, h4)?;
    let grid4 = grid(lo, hi, h4, STEP4_GRID_PER_BANDWIDTH);
    let slopes = kprime.eval_response(0, &grid4)?.derivatives;
    let kprime_spline = CubicSpline::natural(&grid4, &slopes)?;
    let mean_e = e_star.iter().sum::<f64>() / n as f64;
    let mean_int = p.iter().map(|&v| kprime_spline.integral(v)).sum::<f64>() / n as f64;

    Ok(SemiparamMTEFit {
        propensity,
        beta0_hat,
        beta_diff_hat,
        kprime,
        kprime_spline,
        k_offset: mean_e - mean_int,
        support: (lo, hi),
        step2_bandwidth: h2,
        step4_bandwidth: h4,
        fitted_p0: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_roy, RoyDgp, Sampler};
    use crate::special::normal_quantile;

    fn dgp(rho_eta_v: f64, sigma_eta: f64) -> RoyDgp {
        RoyDgp {
            covariates: vec![Sampler::Uniform { low: -1.0, high: 1.0 }],
            instruments: vec![Sampler::Normal { mean: 0.0, sd: 1.0 }],
            gamma: vec![0.0, 0.3, 1.0],
            beta0: vec![1.0, 0.5],
            beta1: vec![1.0, 0.9],
            sigma_eps: 1.0,
            sigma_eta,
            rho_eps_v: 0.2,
            rho_eta_v,
            rho_eps_eta: 0.0,
            selection_link: Default::default(),
        }
    }

    #[test]
    fn liv_identity_holds_by_construction() {
        let data = generate_roy(&dgp(-0.5, 1.0), 3000, 11).unwrap();
        let fit = fit_semiparametric_liv(&data, &SemiparametricOptions::default()).unwrap();
        let (lo, hi) = fit.support;
        for k in 1..20 {
            let p = lo + (hi - lo) * k as f64 / 20.0;
            for x in [-0.5, 0.3] {
                let e = 1e-5;
                let fd = (fit.conditional_mean(&[x], p + e).unwrap() - fit.conditional_mean(&[x], p - e).unwrap()) / (2.0 * e);
                assert!((fd - fit.mte(&[x], p).unwrap()).abs() < 1e-6);
            }
        }
    }

    fn low_noise(rho_eta_v: f64, sigma_eta: f64) -> RoyDgp {
        RoyDgp { sigma_eps: 0.2, ..dgp(rho_eta_v, sigma_eta) }
    }

    fn probit_fit() -> SemiparametricOptions {
        SemiparametricOptions { propensity: PropensityModel::Probit, step4_bandwidth: Some(0.1), ..Default::default() }
    }

    #[test]
    fn recovers_kprime_under_normality() {
        let d = low_noise(-0.9, 0.5);
        let data = generate_roy(&d, 20000, 5).unwrap();
        let fit = fit_semiparametric_liv(&data, &probit_fit()).unwrap();
        let s = d.sigma_eta_v();
        for k in 0..=12 {
            let p = 0.2 + 0.05 * k as f64;
            let err = fit.k_prime(p).unwrap() - s * normal_quantile(p);
            assert!(err.abs() < 0.1, "p {p}: error {err}");
        }
        assert!((fit.beta_diff_hat[0] - 0.4).abs() < 0.05, "{:?}", fit.beta_diff_hat);
        assert!((fit.beta0_hat[0] - 0.5).abs() < 0.05, "{:?}", fit.beta0_hat);
    }

    #[test]
    fn no_gain_heterogeneity_gives_flat_kprime() {
        let data = generate_roy(&low_noise(0.0, 1e-9), 20000, 9).unwrap();
        let fit = fit_semiparametric_liv(&data, &probit_fit()).unwrap();
        for k in 0..=12 {
            let p = 0.2 + 0.05 * k as f64;
            assert!(fit.k_prime(p).unwrap().abs() < 0.05, "p {p}: {}", fit.k_prime(p).unwrap());
        }
    }

    #[test]
    fn interaction_columns_restrict_the_gain() {
        let data = generate_roy(&low_noise(-0.9, 0.5), 4000, 2).unwrap();
        let opts = SemiparametricOptions { interaction_columns: Some(vec![]), ..probit_fit() };
        let fit = fit_semiparametric_liv(&data, &opts).unwrap();
        assert_eq!(fit.beta_diff_hat, vec![0.0]);
        let bad = SemiparametricOptions { interaction_columns: Some(vec![3]), ..probit_fit() };
        assert!(matches!(fit_semiparametric_liv(&data, &bad), Err(Error::Spec(_))));
    }

    #[test]
    fn narrow_support_is_rejected() {
        let d = RoyDgp {
            covariates: vec![Sampler::Uniform { low: -1e-3, high: 1e-3 }],
            instruments: vec![Sampler::Uniform { low: 0.0, high: 1e-3 }],
            ..dgp(-0.5, 1.0)
        };
        let data = generate_roy(&d, 2000, 1).unwrap();
        assert!(matches!(
            fit_semiparametric_liv(&data, &SemiparametricOptions::default()),
            Err(Error::NarrowSupport { .. })
        ));
    }
}
