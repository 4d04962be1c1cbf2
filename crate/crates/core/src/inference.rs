//! Case-resampling bootstrap, influence-function standard errors and
//! cross-fitting folds.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EstimateReport};
use crate::error::{Error, Result};
use crate::learners::bandwidth::quantile_sorted;
use crate::rng::{self, streams};
use crate::special::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Percentile,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapPlan {
    pub replications: usize,
    pub seed: u64,
    pub level: f64,
    pub method: CiMethod,
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        BootstrapPlan { replications: 1000, seed: 0, level: 0.95, method: CiMethod::Percentile }
    }
}

impl BootstrapPlan {
    pub fn new(replications: usize, seed: u64) -> Self {
        BootstrapPlan { replications, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Spec(format!("bootstrap needs B >= 2, got {}", self.replications)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Spec(format!("confidence level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Bootstrap summary for one component of the estimator output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary {
    pub point: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    pub components: Vec<BootstrapSummary>,
    pub replications: usize,
    pub dropped: usize,
    pub seed: u64,
}

impl BootstrapOutcome {
    /// Attaches component `k` to a report.
    pub fn apply(&self, k: usize, report: EstimateReport) -> EstimateReport {
        let c = self.components[k];
        report
            .with_std_error(c.std_error)
            .with_ci(c.ci_lower, c.ci_upper)
            .with_seed(self.seed)
            .diag("bootstrap_replications", self.replications as f64)
            .diag("bootstrap_dropped", self.dropped as f64)
    }
}

/// Row indices for bootstrap replicate `r`.
pub fn resample_indices(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut g = rng::stream(seed, streams::BOOTSTRAP, r as u64);
    (0..n).map(|_| g.random_range(0..n)).collect()
}

/// Bootstraps a vector-valued estimator. Nuisances are refit inside each
/// replicate because the estimator is rerun on the resampled rows.
pub fn bootstrap_multi<F>(estimator: F, data: &Dataset, plan: &BootstrapPlan) -> Result<BootstrapOutcome>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    plan.validate()?;
    let point = estimator(data)?;
    let k = point.len();
    let n = data.n();
    let reps: Vec<Result<Vec<f64>>> = (0..plan.replications)
        .into_par_iter()
        .map(|r| {
            let sample = data.select_rows(&resample_indices(n, plan.seed, r));
            estimator(&sample).and_then(|v| {
                if v.len() != k {
                    Err(Error::Dimension("estimator output length changed across replicates".into()))
                } else if v.iter().any(|t| !t.is_finite()) {
                    Err(Error::Domain("non-finite replicate estimate".into()))
                } else {
                    Ok(v)
                }
            })
        })
        .collect();
    let mut ok = Vec::with_capacity(reps.len());
    let mut dropped = 0;
    let mut last_error = String::new();
    for r in reps {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                dropped += 1;
                last_error = e.to_string();
            }
        }
    }
    if dropped as f64 > 0.05 * plan.replications as f64 || ok.len() < 2 {
        return Err(Error::ExcessiveDrops { dropped, total: plan.replications, last_error });
    }
    let alpha = 1.0 - plan.level;
    let components = (0..k)
        .map(|j| {
            let mut col: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            col.sort_by(f64::total_cmp);
            let se = welford_sd(&col);
            let (lo, hi) = match plan.method {
                CiMethod::Percentile => (quantile_sorted(&col, alpha / 2.0), quantile_sorted(&col, 1.0 - alpha / 2.0)),
                CiMethod::Normal => {
                    let z = normal_quantile(1.0 - alpha / 2.0);
                    (point[j] - z * se, point[j] + z * se)
                }
            };
            BootstrapSummary { point: point[j], std_error: se, ci_lower: lo, ci_upper: hi }
        })
        .collect();
    Ok(BootstrapOutcome { components, replications: plan.replications, dropped, seed: plan.seed })
}

/// Scalar convenience wrapper around [`bootstrap_multi`].
pub fn bootstrap<F>(estimator: F, data: &Dataset, plan: &BootstrapPlan) -> Result<BootstrapOutcome>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    bootstrap_multi(|d| estimator(d).map(|v| vec![v]), data, plan)
}

/// Sample standard deviation; exactly zero for constant input.
fn welford_sd(x: &[f64]) -> f64 {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    (m2 / (x.len() - 1) as f64).max(0.0).sqrt()
}

/// `sqrt(mean(score²) / n)`.
pub fn eif_variance(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    (scores.iter().map(|s| s * s).sum::<f64>() / n / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn new(k: usize, seed: u64) -> Self {
        FoldPlan { k, seed, assignments: Vec::new() }
    }

    /// Rows in fold `f`.
    pub fn test_rows(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == f).collect()
    }

    /// Rows outside fold `f`.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != f).collect()
    }
}

/// Seeded shuffle, then fold = position mod `k`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 1 || n < k {
        return Err(Error::TooFewRows { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, streams::FOLDS, 0));
    let mut assignments = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan { k, seed, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy(n: usize) -> Dataset {
        let y: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        Dataset::new(DMatrix::zeros(n, 1), (0..n).map(|i| (i % 2) as f64).collect(), y)
    }

    fn mean_y(d: &Dataset) -> Result<f64> {
        Ok(d.y().iter().sum::<f64>() / d.n() as f64)
    }

    #[test]
    fn constant_estimator_has_zero_se() {
        let out = bootstrap(|_| Ok(2.5), &toy(50), &BootstrapPlan::new(200, 1)).unwrap();
        let c = out.components[0];
        assert_eq!(c.std_error, 0.0);
        assert_eq!((c.ci_lower, c.ci_upper), (2.5, 2.5));
    }

    #[test]
    fn mean_se_matches_classical_formula() {
        let d = toy(400);
        let y = d.y();
        let m = y.iter().sum::<f64>() / 400.0;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 399.0).sqrt();
        for seed in 0..3 {
            let se = bootstrap(mean_y, &d, &BootstrapPlan::new(1000, seed)).unwrap().components[0].std_error;
            assert!((se / (sd / 20.0) - 1.0).abs() < 0.15);
        }
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let d = toy(100);
        let a = bootstrap(mean_y, &d, &BootstrapPlan::new(100, 9)).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = one.install(|| bootstrap(mean_y, &d, &BootstrapPlan::new(100, 9)).unwrap());
        assert_eq!(a.components[0].std_error.to_bits(), b.components[0].std_error.to_bits());
    }

    #[test]
    fn excessive_drops_abort() {
        let d = toy(40);
        let flaky = |s: &Dataset| if s.y()[0] > 5.0 { Err(Error::Domain("x".into())) } else { mean_y(s) };
        assert!(matches!(
            bootstrap(flaky, &d, &BootstrapPlan::new(100, 2)),
            Err(Error::ExcessiveDrops { .. })
        ));
    }

    #[test]
    fn eif_se() {
        assert_eq!(eif_variance(&[0.0; 10]), 0.0);
        assert!((eif_variance(&[1.0, -1.0, 1.0, -1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fold_sizes() {
        let p = make_folds(11, 5, 3).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| p.test_rows(f).len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert_eq!(make_folds(11, 5, 3).unwrap(), p);
        assert!(make_folds(3, 5, 0).is_err());
        let q = make_folds(10, 5, 0).unwrap();
        assert!((0..5).all(|f| q.test_rows(f).len() == 2));
    }
}
