use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{draw_columns, linear_range, ratio_oracle, OracleResult, Sampler};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interventions::InterventionFamily;
use crate::rng::{self, streams};
use crate::special::{normal_cdf, normal_quantile, normal_quantile_integral};

/// How the selection index maps to the propensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionLink {
    /// `A = 1{γᵀZ ≥ V}`, `p₀ = Φ(γᵀZ)`.
    #[default]
    Probit,
    /// `A = 1{Φ(V) ≤ γᵀZ}`, `p₀ = γᵀZ` clamped to `[0, 1]`.
    Linear,
}

/// Generalized Roy model with jointly normal `(ε, η, V)`, `σ_V = 1`:
/// `Y = β₀ᵀX + ε + A·((β₁−β₀)ᵀX + η)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoyDgp {
    pub covariates: Vec<Sampler>,
    /// Excluded instruments.
    pub instruments: Vec<Sampler>,
    /// Intercept, covariates, then instruments.
    pub gamma: Vec<f64>,
    /// Intercept first.
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub sigma_eps: f64,
    pub sigma_eta: f64,
    #[serde(default)]
    pub rho_eps_v: f64,
    #[serde(default)]
    pub rho_eta_v: f64,
    #[serde(default)]
    pub rho_eps_eta: f64,
    #[serde(default)]
    pub selection_link: SelectionLink,
}

impl RoyDgp {
    /// Loadings with `ε/σ_ε = ρ_εV·V + ce·ξ₁` and
    /// `η/σ_η = ρ_ηV·V + ch·ξ₁ + dh·ξ₂` for independent standard normals.
    fn factor(&self) -> (f64, f64, f64) {
        let ce = (1.0 - self.rho_eps_v.powi(2)).max(0.0).sqrt();
        let ch = if ce > 0.0 { (self.rho_eps_eta - self.rho_eps_v * self.rho_eta_v) / ce } else { 0.0 };
        let dh = (1.0 - self.rho_eta_v.powi(2) - ch * ch).max(0.0).sqrt();
        (ce, ch, dh)
    }

    pub fn validate(&self) -> Result<()> {
        let (dx, dz) = (self.covariates.len(), self.instruments.len());
        self.covariates.iter().chain(&self.instruments).try_for_each(Sampler::validate)?;
        if dz == 0 {
            return Err(Error::Spec("at least one excluded instrument is required".into()));
        }
        if self.gamma.len() != 1 + dx + dz || self.beta0.len() != 1 + dx || self.beta1.len() != 1 + dx {
            return Err(Error::Spec(format!(
                "gamma needs {} and beta vectors {} coefficients (intercept first)",
                1 + dx + dz,
                1 + dx
            )));
        }
        if self.gamma[1 + dx..].iter().all(|g| *g == 0.0) {
            return Err(Error::Spec("instrument coefficients are all zero (relevance fails)".into()));
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eta >= 0.0) {
            return Err(Error::Spec("error standard deviations must be nonnegative".into()));
        }
        for r in [self.rho_eps_v, self.rho_eta_v, self.rho_eps_eta] {
            if !(r.abs() < 1.0) {
                return Err(Error::Spec(format!("correlation {r} outside (-1, 1)")));
            }
        }
        let (ce, ch, _) = self.factor();
        if 1.0 - self.rho_eta_v.powi(2) - ch * ch <= 0.0 || ce == 0.0 {
            return Err(Error::Spec("error correlation matrix is not positive definite".into()));
        }
        if self.selection_link == SelectionLink::Linear {
            let (lo, hi) = linear_range(&self.gamma, &self.all_samplers());
            if (lo.is_finite() && lo < 0.0) || (hi.is_finite() && hi > 1.0) {
                return Err(Error::Spec(format!("linear selection index ranges over [{lo}, {hi}], outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn all_samplers(&self) -> Vec<Sampler> {
        self.covariates.iter().chain(&self.instruments).cloned().collect()
    }

    /// Identified switching-regression parameters `(σ₀, ρ₀, σ₁, ρ₁)`: the
    /// SDs of the untreated and treated outcome errors and their
    /// correlations with `V`.
    pub fn identified(&self) -> (f64, f64, f64, f64) {
        let (se, sh) = (self.sigma_eps, self.sigma_eta);
        let s1 = (se * se + sh * sh + 2.0 * self.rho_eps_eta * se * sh).sqrt();
        let r1 = (self.rho_eps_v * se + self.rho_eta_v * sh) / s1;
        (se, self.rho_eps_v, s1, r1)
    }

    /// `Cov(η, V)` with `σ_V = 1`.
    pub fn sigma_eta_v(&self) -> f64 {
        self.rho_eta_v * self.sigma_eta
    }

    pub fn beta_diff(&self) -> Vec<f64> {
        self.beta1.iter().zip(&self.beta0).map(|(a, b)| a - b).collect()
    }

    /// `p₀(z)` where `z` holds covariates then instruments (no intercept).
    pub fn propensity(&self, z: &[f64]) -> f64 {
        let t = self.gamma[0] + self.gamma[1..].iter().zip(z).map(|(g, v)| g * v).sum::<f64>();
        match self.selection_link {
            SelectionLink::Probit => normal_cdf(t),
            SelectionLink::Linear => t.clamp(0.0, 1.0),
        }
    }

    /// `(β₁−β₀)ᵀx` with the intercept included.
    pub fn cate(&self, x: &[f64]) -> f64 {
        let d = self.beta_diff();
        d[0] + d[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `MTE(x, u) = (β₁−β₀)ᵀx + σ_ηV Φ⁻¹(u)`.
    pub fn mte(&self, x: &[f64], u: f64) -> f64 {
        let s = self.sigma_eta_v();
        if s == 0.0 {
            self.cate(x)
        } else {
            self.cate(x) + s * normal_quantile(u)
        }
    }

    /// `∫ₐᵇ MTE(x, u) du`.
    pub fn mte_integral(&self, x: &[f64], a: f64, b: f64) -> f64 {
        self.cate(x) * (b - a) + self.sigma_eta_v() * normal_quantile_integral(a, b)
    }
}

/// Draws a dataset and the true propensities. `x` holds the covariates and
/// `z` holds covariates followed by the excluded instruments.
pub fn generate_roy_with_truth(dgp: &RoyDgp, n: usize, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    dgp.validate()?;
    let dx = dgp.covariates.len();
    let x = draw_columns(&dgp.covariates, n, seed, streams::COLUMN_BASE);
    let iv = draw_columns(&dgp.instruments, n, seed, streams::INSTRUMENT_BASE);
    let (ce, ch, dh) = dgp.factor();
    let shocks: Vec<[f64; 3]> = rng::fill_blocks(n, seed, streams::LATENT, |r| {
        [r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal)]
    });
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut p_true = Vec::with_capacity(n);
    let mut z = vec![0.0; dx + dgp.instruments.len()];
    for i in 0..n {
        for j in 0..dx {
            z[j] = x[(i, j)];
        }
        for j in 0..dgp.instruments.len() {
            z[dx + j] = iv[(i, j)];
        }
        let [v, s1, s2] = shocks[i];
        let eps = dgp.sigma_eps * (dgp.rho_eps_v * v + ce * s1);
        let eta = dgp.sigma_eta * (dgp.rho_eta_v * v + ch * s1 + dh * s2);
        let p = dgp.propensity(&z);
        let t = dgp.gamma[0] + dgp.gamma[1..].iter().zip(&z).map(|(g, w)| g * w).sum::<f64>();
        let treated = match dgp.selection_link {
            SelectionLink::Probit => t >= v,
            SelectionLink::Linear => normal_cdf(v) <= t,
        };
        let ai = f64::from(treated);
        let xr = &z[..dx];
        let mu0 = dgp.beta0[0] + dgp.beta0[1..].iter().zip(xr).map(|(b, w)| b * w).sum::<f64>();
        y.push(mu0 + eps + ai * (dgp.cate(xr) + eta));
        a.push(ai);
        p_true.push(p);
    }
    let x_names: Vec<String> = (1..=dx).map(|j| format!("x{j}")).collect();
    let z_names: Vec<String> = x_names.iter().cloned().chain((1..=dgp.instruments.len()).map(|j| format!("z{j}"))).collect();
    let data = Dataset::new(x, a, y).with_excluded_instruments(&iv).with_x_names(x_names).with_z_names(z_names);
    Ok((data, p_true))
}

pub fn generate_roy(dgp: &RoyDgp, n: usize, seed: u64) -> Result<Dataset> {
    generate_roy_with_truth(dgp, n, seed).map(|(d, _)| d)
}

/// `E[λ(p₀(Z)) MTE(X, p₀(Z))] / E[λ(p₀(Z))]`.
pub fn oracle_mie_iv(dgp: &RoyDgp, family: &InterventionFamily) -> Result<OracleResult> {
    dgp.validate()?;
    let dx = dgp.covariates.len();
    ratio_oracle(&dgp.all_samplers(), |z| {
        let p = dgp.propensity(z);
        let l = family.lambda(p)?;
        Ok((if l == 0.0 { 0.0 } else { l * dgp.mte(&z[..dx], p) }, l))
    })
}

/// `E[∫_{p₀}^{π_δ} MTE(X, u) du] / E[π_δ − p₀]`.
pub fn oracle_ie_iv(dgp: &RoyDgp, family: &InterventionFamily, delta: f64) -> Result<OracleResult> {
    dgp.validate()?;
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("IE requires delta > 0, got {delta}")));
    }
    let dx = dgp.covariates.len();
    ratio_oracle(&dgp.all_samplers(), |z| {
        let p = dgp.propensity(z);
        let q = family.pi_delta(p, delta)?;
        Ok((dgp.mte_integral(&z[..dx], p, q), q - p))
    })
}

/// Oracle ATT and ATU: MTE averaged over `u ≤ p₀(Z)` and `u > p₀(Z)`.
pub fn oracle_att_atu_iv(dgp: &RoyDgp) -> Result<(OracleResult, OracleResult)> {
    dgp.validate()?;
    let dx = dgp.covariates.len();
    let s = dgp.all_samplers();
    let att = ratio_oracle(&s, |z| {
        let p = dgp.propensity(z);
        Ok((dgp.mte_integral(&z[..dx], 0.0, p), p))
    })?;
    let atu = ratio_oracle(&s, |z| {
        let p = dgp.propensity(z);
        Ok((dgp.mte_integral(&z[..dx], p, 1.0), 1.0 - p))
    })?;
    Ok((att, atu))
}
