//! Synthetic data generators with known ground truth and oracle
//! evaluation of IE/MIE by product quadrature or Monte Carlo.

mod roy;
mod unconfounded;

pub use roy::{oracle_att_atu_iv, oracle_ie_iv, oracle_mie_iv, generate_roy, generate_roy_with_truth, RoyDgp, SelectionLink};
pub use unconfounded::{
    generate_unconfounded, oracle_ie_unconfounded, oracle_mie_unconfounded, oracle_mie_unconfounded_mc,
    PropensityLink, PropensitySpec, TauSpec, UnconfoundedDgp,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::rng::{self, streams, BLOCK_SIZE};
use crate::special::normal_quantile;

/// Default Monte Carlo oracle budget.
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;

/// Distribution of one covariate or instrument column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Sampler {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    Mixture { weights: Vec<f64>, components: Vec<Sampler> },
}

impl Sampler {
    pub fn validate(&self) -> Result<()> {
        match self {
            Sampler::Uniform { low, high } if !(low < high) => {
                Err(Error::Spec(format!("uniform sampler needs low < high, got [{low}, {high}]")))
            }
            Sampler::Normal { sd, .. } if !(*sd > 0.0) => Err(Error::Spec(format!("normal sampler sd {sd} <= 0"))),
            Sampler::Bernoulli { p } if !(0.0..=1.0).contains(p) => {
                Err(Error::Spec(format!("bernoulli probability {p} outside [0, 1]")))
            }
            Sampler::Mixture { weights, components } => {
                if weights.len() != components.len() || components.is_empty() {
                    return Err(Error::Spec("mixture weights and components differ in length".into()));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Spec("mixture weights must be nonnegative and sum to 1".into()));
                }
                components.iter().try_for_each(Sampler::validate)
            }
            _ => Ok(()),
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Sampler::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Sampler::Bernoulli { p } => f64::from(rng.random::<f64>() < *p),
            Sampler::Mixture { weights, components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w;
                    if u < acc {
                        return c.draw(rng);
                    }
                }
                components[components.len() - 1].draw(rng)
            }
        }
    }

    /// Closed support bounds (infinite for normal components).
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Sampler::Uniform { low, high } => (*low, *high),
            Sampler::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Sampler::Bernoulli { p } => (if *p < 1.0 { 0.0 } else { 1.0 }, if *p > 0.0 { 1.0 } else { 0.0 }),
            Sampler::Mixture { components, .. } => components
                .iter()
                .map(Sampler::bounds)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1))),
        }
    }

    /// Expectation rule with roughly `m` nodes: composite 8-point
    /// Gauss–Legendre panels in probability space for continuous parts.
    fn rule(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            Sampler::Uniform { low, high } => {
                let (u, w) = unit_rule(m);
                (u.iter().map(|t| low + (high - low) * t).collect(), w)
            }
            Sampler::Normal { mean, sd } => {
                let (u, w) = unit_rule(m);
                (u.iter().map(|t| mean + sd * normal_quantile(*t)).collect(), w)
            }
            Sampler::Bernoulli { p } => (vec![0.0, 1.0], vec![1.0 - p, *p]),
            Sampler::Mixture { weights, components } => {
                let (mut nodes, mut wts) = (Vec::new(), Vec::new());
                for (cw, c) in weights.iter().zip(components) {
                    let (n, w) = c.rule(m);
                    nodes.extend(n);
                    wts.extend(w.iter().map(|v| v * cw));
                }
                (nodes, wts)
            }
        }
    }
}

fn unit_rule(m: usize) -> (Vec<f64>, Vec<f64>) {
    let base = gauss_legendre(8);
    let panels = (m / 8).max(1);
    let h = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 8);
    let mut weights = Vec::with_capacity(panels * 8);
    for p in 0..panels {
        let c = (p as f64 + 0.5) * h;
        for (x, w) in base.nodes.iter().zip(&base.weights) {
            nodes.push(c + 0.5 * h * x);
            weights.push(0.5 * h * w);
        }
    }
    (nodes, weights)
}

/// Draws an `n × samplers.len()` matrix column by column, each column on
/// its own stream starting at `base`.
pub(crate) fn draw_columns(samplers: &[Sampler], n: usize, seed: u64, base: u64) -> nalgebra::DMatrix<f64> {
    let cols: Vec<Vec<f64>> = samplers
        .iter()
        .enumerate()
        .map(|(j, s)| rng::fill_blocks(n, seed, base + j as u64, |r| s.draw(r)))
        .collect();
    nalgebra::DMatrix::from_fn(n, samplers.len(), |i, j| cols[j][i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    Quadrature,
    MonteCarlo,
}

/// A ground-truth value; `mc_se` is present exactly for Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub method: OracleMethod,
    pub mc_draws: usize,
    pub mc_se: Option<f64>,
}

/// Largest dimension handled by product quadrature.
pub const MAX_QUADRATURE_DIM: usize = 3;

/// `E[num(x)] / E[den(x)]` over independent columns by product quadrature.
pub(crate) fn ratio_quadrature<F>(samplers: &[Sampler], f: F) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> Result<(f64, f64)> + Sync,
{
    let d = samplers.len();
    if d == 0 || d > MAX_QUADRATURE_DIM {
        return Err(Error::Spec(format!("product quadrature supports 1..={MAX_QUADRATURE_DIM} dimensions, got {d}")));
    }
    let m = match d {
        1 => 8192,
        2 => 512,
        _ => 96,
    };
    let rules: Vec<(Vec<f64>, Vec<f64>)> = samplers.iter().map(|s| s.rule(m)).collect();
    let sizes: Vec<usize> = rules.iter().map(|r| r.0.len()).collect();
    let total: usize = sizes.iter().product();
    let parts = crate::par::chunked(total, |range| -> Result<(f64, f64)> {
        let (mut num, mut den) = (0.0, 0.0);
        let mut x = [0.0; MAX_QUADRATURE_DIM];
        for mut idx in range {
            let mut w = 1.0;
            for j in 0..d {
                let k = idx % sizes[j];
                idx /= sizes[j];
                x[j] = rules[j].0[k];
                w *= rules[j].1[k];
            }
            let (a, b) = f(&x[..d])?;
            num += w * a;
            den += w * b;
        }
        Ok((num, den))
    });
    let (mut num, mut den) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        num += a;
        den += b;
    }
    if !(den.abs() > 0.0) {
        return Err(Error::DegenerateWeights { sum: den, threshold: 0.0 });
    }
    Ok(OracleResult { value: num / den, method: OracleMethod::Quadrature, mc_draws: 0, mc_se: None })
}

/// Monte Carlo version of [`ratio_quadrature`] with a delta-method SE.
pub(crate) fn ratio_monte_carlo<F>(samplers: &[Sampler], draws: usize, seed: u64, f: F) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> Result<(f64, f64)> + Sync,
{
    let blocks = draws.div_ceil(BLOCK_SIZE);
    let parts: Result<Vec<Vec<(f64, f64)>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, streams::ORACLE, b as u64);
            let len = BLOCK_SIZE.min(draws - b * BLOCK_SIZE);
            let mut x = vec![0.0; samplers.len()];
            (0..len)
                .map(|_| {
                    for (v, s) in x.iter_mut().zip(samplers) {
                        *v = s.draw(&mut rng);
                    }
                    f(&x)
                })
                .collect()
        })
        .collect();
    let pairs: Vec<(f64, f64)> = parts?.into_iter().flatten().collect();
    let n = pairs.len() as f64;
    let (sn, sd) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    if !(sd.abs() > 0.0) {
        return Err(Error::DegenerateWeights { sum: sd, threshold: 0.0 });
    }
    let value = sn / sd;
    let var = pairs.iter().map(|(a, b)| (a - value * b).powi(2)).sum::<f64>() / (n - 1.0);
    let se = var.sqrt() / (n.sqrt() * (sd / n).abs());
    Ok(OracleResult { value, method: OracleMethod::MonteCarlo, mc_draws: pairs.len(), mc_se: Some(se) })
}

pub(crate) fn ratio_oracle<F>(samplers: &[Sampler], f: F) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> Result<(f64, f64)> + Sync,
{
    if samplers.len() <= MAX_QUADRATURE_DIM {
        ratio_quadrature(samplers, f)
    } else {
        ratio_monte_carlo(samplers, DEFAULT_MC_DRAWS, 0, f)
    }
}

/// Range of `c0 + Σ cⱼ xⱼ` over a box of column bounds.
pub(crate) fn linear_range(coefficients: &[f64], samplers: &[Sampler]) -> (f64, f64) {
    let mut lo = coefficients[0];
    let mut hi = coefficients[0];
    for (c, s) in coefficients[1..].iter().zip(samplers) {
        if *c == 0.0 {
            continue;
        }
        let (a, b) = s.bounds();
        let (u, v) = (c * a, c * b);
        lo += u.min(v);
        hi += u.max(v);
    }
    (lo, hi)
}
