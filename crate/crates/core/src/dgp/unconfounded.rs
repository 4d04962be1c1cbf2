use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{draw_columns, linear_range, ratio_monte_carlo, ratio_oracle, OracleResult, Sampler};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interventions::InterventionFamily;
use crate::rng::{self, streams};
use crate::special::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropensityLink {
    #[default]
    Logit,
    Linear,
}

/// `p₀(x) = link(c₀ + Σ cⱼ xⱼ)`. The linear link is clamped to `[0, 1]`;
/// validation rejects it only when bounded covariates push it outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensitySpec {
    #[serde(default)]
    pub link: PropensityLink,
    /// Intercept first.
    pub coefficients: Vec<f64>,
}

impl PropensitySpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let t = self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        match self.link {
            PropensityLink::Logit => logistic(t),
            PropensityLink::Linear => t.clamp(0.0, 1.0),
        }
    }
}

/// Closed-form conditional average treatment effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum TauSpec {
    Constant { value: f64 },
    /// `c₀ + Σ cⱼ xⱼ`.
    Linear { coefficients: Vec<f64> },
    /// `c₀ + Σ cⱼ xⱼ + Σ qⱼ xⱼ²`.
    Quadratic { coefficients: Vec<f64>, squares: Vec<f64> },
    /// `below` if `x[column] < threshold`, else `above`.
    Step { column: usize, threshold: f64, below: f64, above: f64 },
}

impl TauSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TauSpec::Constant { value } => *value,
            TauSpec::Linear { coefficients } => linear(coefficients, x),
            TauSpec::Quadratic { coefficients, squares } => {
                linear(coefficients, x) + squares.iter().zip(x).map(|(q, v)| q * v * v).sum::<f64>()
            }
            TauSpec::Step { column, threshold, below, above } => {
                if x[*column] < *threshold {
                    *below
                } else {
                    *above
                }
            }
        }
    }
}

fn linear(c: &[f64], x: &[f64]) -> f64 {
    c[0] + c[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// `Y = μ₀(X) + τ(X)·A + σ·ξ` with `A ~ Bernoulli(p₀(X))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconfoundedDgp {
    pub covariates: Vec<Sampler>,
    pub propensity: PropensitySpec,
    pub tau: TauSpec,
    /// Linear baseline mean, intercept first.
    pub mu0: Vec<f64>,
    #[serde(default = "one")]
    pub noise_sd: f64,
}

fn one() -> f64 {
    1.0
}

impl UnconfoundedDgp {
    pub fn dim(&self) -> usize {
        self.covariates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Spec("at least one covariate is required".into()));
        }
        self.covariates.iter().try_for_each(Sampler::validate)?;
        if self.propensity.coefficients.len() != d + 1 || self.mu0.len() != d + 1 {
            return Err(Error::Spec(format!("propensity and mu0 need {} coefficients (intercept first)", d + 1)));
        }
        match &self.tau {
            TauSpec::Linear { coefficients } if coefficients.len() != d + 1 => {
                return Err(Error::Spec("linear tau needs intercept + one coefficient per covariate".into()))
            }
            TauSpec::Quadratic { coefficients, squares } if coefficients.len() != d + 1 || squares.len() != d => {
                return Err(Error::Spec("quadratic tau needs d+1 linear and d square coefficients".into()))
            }
            TauSpec::Step { column, .. } if *column >= d => {
                return Err(Error::Spec(format!("step tau column {column} out of range")))
            }
            _ => {}
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Spec("noise_sd must be nonnegative".into()));
        }
        if self.propensity.link == PropensityLink::Linear {
            let (lo, hi) = linear_range(&self.propensity.coefficients, &self.covariates);
            if (lo.is_finite() && lo < 0.0) || (hi.is_finite() && hi > 1.0) {
                return Err(Error::Spec(format!("linear propensity ranges over [{lo}, {hi}], outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn mu0(&self, x: &[f64]) -> f64 {
        linear(&self.mu0, x)
    }
}

/// Draws `n` rows; identical `(dgp, n, seed)` gives identical data.
pub fn generate_unconfounded(dgp: &UnconfoundedDgp, n: usize, seed: u64) -> Result<Dataset> {
    dgp.validate()?;
    let x = draw_columns(&dgp.covariates, n, seed, streams::COLUMN_BASE);
    let u: Vec<f64> = rng::fill_blocks(n, seed, streams::TREATMENT, |r| r.random::<f64>());
    let e: Vec<f64> = rng::fill_blocks(n, seed, streams::OUTCOME_NOISE, |r| r.sample::<f64, _>(StandardNormal));
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; dgp.dim()];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        let ai = f64::from(u[i] < dgp.propensity.eval(&row));
        a.push(ai);
        y.push(dgp.mu0(&row) + dgp.tau.eval(&row) * ai + dgp.noise_sd * e[i]);
    }
    let names = (1..=dgp.dim()).map(|j| format!("x{j}")).collect();
    Ok(Dataset::new(x, a, y).with_x_names(names))
}

fn mie_integrand<'a>(dgp: &'a UnconfoundedDgp, family: &'a InterventionFamily) -> impl Fn(&[f64]) -> Result<(f64, f64)> + Sync + 'a {
    move |x| {
        let l = family.lambda(dgp.propensity.eval(x))?;
        Ok((l * dgp.tau.eval(x), l))
    }
}

/// `E[λ(p₀(X)) τ(X)] / E[λ(p₀(X))]`; quadrature up to three covariates,
/// Monte Carlo beyond.
pub fn oracle_mie_unconfounded(dgp: &UnconfoundedDgp, family: &InterventionFamily) -> Result<OracleResult> {
    dgp.validate()?;
    ratio_oracle(&dgp.covariates, mie_integrand(dgp, family))
}

pub fn oracle_mie_unconfounded_mc(
    dgp: &UnconfoundedDgp,
    family: &InterventionFamily,
    draws: usize,
    seed: u64,
) -> Result<OracleResult> {
    dgp.validate()?;
    ratio_monte_carlo(&dgp.covariates, draws, seed, mie_integrand(dgp, family))
}

/// `E[(π_δ − p₀) τ] / E[π_δ − p₀]`.
pub fn oracle_ie_unconfounded(dgp: &UnconfoundedDgp, family: &InterventionFamily, delta: f64) -> Result<OracleResult> {
    dgp.validate()?;
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("IE requires delta > 0, got {delta}")));
    }
    ratio_oracle(&dgp.covariates, |x| {
        let p = dgp.propensity.eval(x);
        let w = family.pi_delta(p, delta)? - p;
        Ok((w * dgp.tau.eval(x), w))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_case() -> UnconfoundedDgp {
        UnconfoundedDgp {
            covariates: vec![Sampler::Uniform { low: 0.0, high: 1.0 }],
            propensity: PropensitySpec { link: PropensityLink::Linear, coefficients: vec![0.0, 1.0] },
            tau: TauSpec::Linear { coefficients: vec![0.0, 1.0] },
            mu0: vec![0.0, 0.5],
            noise_sd: 1.0,
        }
    }

    #[test]
    fn closed_form_ipsi_oracle() {
        let o = oracle_mie_unconfounded(&worked_case(), &InterventionFamily::ipsi()).unwrap();
        assert!((o.value - 0.5).abs() < 1e-10);
    }

    #[test]
    fn closed_form_other_families() {
        // E[x·λ]/E[λ] with λ = 1, x, 1−x.
        let d = worked_case();
        let v = |f: InterventionFamily| oracle_mie_unconfounded(&d, &f).unwrap().value;
        assert!((v(InterventionFamily::additive()) - 0.5).abs() < 1e-10);
        assert!((v(InterventionFamily::multiplicative()) - 2.0 / 3.0).abs() < 1e-10);
        assert!((v(InterventionFamily::equalizing()) - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn constant_tau_oracle() {
        let mut d = worked_case();
        d.tau = TauSpec::Constant { value: 1.7 };
        for f in InterventionFamily::stylized() {
            assert!((oracle_mie_unconfounded(&d, &f).unwrap().value - 1.7).abs() < 1e-12);
            assert!((oracle_ie_unconfounded(&d, &f, 0.3).unwrap().value - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic_and_calibrated() {
        let mut d = worked_case();
        d.propensity = PropensitySpec { link: PropensityLink::Logit, coefficients: vec![0.0, 0.0] };
        let a = generate_unconfounded(&d, 20_000, 4).unwrap();
        let b = generate_unconfounded(&d, 20_000, 4).unwrap();
        assert_eq!(a, b);
        let frac = a.n_treated() as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 4.0 / 20_000f64.sqrt());
    }

    use crate::dgp::tests::shrinking;

    #[test]
    fn ie_converges_to_mie() {
        let d = UnconfoundedDgp {
            covariates: vec![Sampler::Normal { mean: 0.0, sd: 1.0 }],
            propensity: PropensitySpec { link: PropensityLink::Logit, coefficients: vec![-0.2, 0.8] },
            tau: TauSpec::Quadratic { coefficients: vec![1.0, 0.5], squares: vec![0.3] },
            mu0: vec![0.0, 1.0],
            noise_sd: 1.0,
        };
        for f in InterventionFamily::stylized() {
            let mie = oracle_mie_unconfounded(&d, &f).unwrap().value;
            let gaps: Vec<f64> = [0.1, 0.01, 0.001]
                .iter()
                .map(|&dl| (oracle_ie_unconfounded(&d, &f, dl).unwrap().value - mie).abs())
                .collect();
            assert!(shrinking(&gaps), "{} {gaps:?}", f.name());
        }
    }

    #[test]
    fn rejects_invalid_linear_propensity() {
        let mut d = worked_case();
        d.propensity.coefficients = vec![0.5, 1.0];
        assert!(d.validate().is_err());
    }

    #[test]
    fn monte_carlo_matches_quadrature() {
        let d = worked_case();
        let f = InterventionFamily::ipsi();
        let mc = oracle_mie_unconfounded_mc(&d, &f, 200_000, 1).unwrap();
        assert!((mc.value - 0.5).abs() < 4.0 * mc.mc_se.unwrap());
    }
}
