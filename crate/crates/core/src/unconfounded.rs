//! IE/MIE estimation when treatment is unconfounded given `X`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EstimandKind, EstimateReport, Regime};
use crate::error::{Error, Result};
use crate::inference::{eif_variance, make_folds};
use crate::interventions::{InterventionFamily, WeightScheme};
use crate::nuisance::{
    clip_propensities, fit_propensity, OutcomeFit, OutcomeKind, PropensityFit, PropensityModel, Regression,
    PROPENSITY_CLIP,
};

/// Nuisance and sample options shared by the unconfounded estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnconfoundedOptions {
    pub propensity: PropensityModel,
    pub outcome: OutcomeKind,
    /// Fit one outcome regression on `(A, X)` instead of one per arm.
    pub pooled_outcome: bool,
    pub clip: f64,
    /// Restrict to the propensity overlap interval before estimating.
    pub trim: bool,
    /// Cross-fitting folds for Robinson and AIPW; below 2 disables it.
    pub crossfit_folds: usize,
    pub fold_seed: u64,
}

impl Default for UnconfoundedOptions {
    fn default() -> Self {
        UnconfoundedOptions {
            propensity: PropensityModel::Logit,
            outcome: OutcomeKind::Auto,
            pooled_outcome: false,
            clip: PROPENSITY_CLIP,
            trim: false,
            crossfit_folds: 5,
            fold_seed: 0,
        }
    }
}

/// Fitted nuisances on the rows actually used.
#[derive(Debug, Clone)]
pub struct UnconfoundedFit {
    pub propensity: PropensityFit,
    pub outcome: Option<OutcomeFit>,
    pub fitted_p0: Vec<f64>,
    pub fitted_mu1: Vec<f64>,
    pub fitted_mu0: Vec<f64>,
    pub trimming_bounds: Option<(f64, f64)>,
    /// Rows of the input dataset kept after trimming.
    pub rows: Vec<usize>,
    pub clipped_low: usize,
    pub clipped_high: usize,
}

impl UnconfoundedFit {
    pub fn n_used(&self) -> usize {
        self.rows.len()
    }

    fn diagnostics(&self, mut r: EstimateReport) -> EstimateReport {
        r = r
            .diag("clipped_low", self.clipped_low as f64)
            .diag("clipped_high", self.clipped_high as f64)
            .diag("propensity_converged", f64::from(u8::from(self.propensity.converged())));
        if let Some((lo, hi)) = self.trimming_bounds {
            r = r.diag("trim_low", lo).diag("trim_high", hi);
        }
        r
    }
}

/// Keeps rows with `p̂ ∈ [min over treated, max over controls]`.
pub fn trim_by_propensity(data: &Dataset, fitted_p0: &[f64]) -> Result<(Vec<usize>, (f64, f64))> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &p) in fitted_p0.iter().enumerate() {
        if data.a()[i] == 1.0 {
            lo = lo.min(p);
        } else {
            hi = hi.max(p);
        }
    }
    let rows: Vec<usize> = (0..data.n()).filter(|&i| fitted_p0[i] >= lo && fitted_p0[i] <= hi).collect();
    if rows.is_empty() {
        return Err(Error::EmptyTrim { low: lo, high: hi });
    }
    Ok((rows, (lo, hi)))
}

fn fitted_propensity(x: &DMatrix<f64>, a: &[f64], opts: &UnconfoundedOptions) -> Result<(PropensityFit, Vec<f64>)> {
    let fit = fit_propensity(x, a, opts.propensity)?;
    let p = fit.predict(x);
    Ok((fit, p))
}

/// Fits the propensity (and, when `with_outcome`, the arm outcome models),
/// trimming first if requested.
pub fn fit_unconfounded(data: &Dataset, opts: &UnconfoundedOptions, with_outcome: bool) -> Result<UnconfoundedFit> {
    data.ensure_valid()?;
    data.ensure_both_arms()?;
    let (mut prop, mut p) = fitted_propensity(data.x(), data.a(), opts)?;
    let mut rows: Vec<usize> = (0..data.n()).collect();
    let mut bounds = None;
    let mut sub = None;
    if opts.trim {
        let (kept, b) = trim_by_propensity(data, &p)?;
        bounds = Some(b);
        if kept.len() < data.n() {
            let d = data.select_rows(&kept);
            d.ensure_both_arms()?;
            (prop, p) = fitted_propensity(d.x(), d.a(), opts)?;
            sub = Some(d);
        }
        rows = kept;
    }
    let d = sub.as_ref().unwrap_or(data);
    let (clipped_low, clipped_high) = clip_propensities(&mut p, opts.clip);
    let (outcome, mu1, mu0) = if with_outcome {
        let o = OutcomeFit::fit(d.x(), d.a(), d.y(), opts.outcome, opts.pooled_outcome)?;
        let (m1, m0) = o.predict(d.x());
        (Some(o), m1, m0)
    } else {
        (None, Vec::new(), Vec::new())
    };
    Ok(UnconfoundedFit {
        propensity: prop,
        outcome,
        fitted_p0: p,
        fitted_mu1: mu1,
        fitted_mu0: mu0,
        trimming_bounds: bounds,
        rows,
        clipped_low,
        clipped_high,
    })
}

fn label(kind: EstimandKind, name: &str) -> String {
    format!("{kind} {name}")
}

/// `Σ wᵢ τ̂ᵢ / Σ wᵢ`, failing when the weights are degenerate.
fn weighted_cate(weights: &[f64], mu1: &[f64], mu0: &[f64]) -> Result<f64> {
    let n = weights.len() as f64;
    let sum: f64 = weights.iter().sum();
    let threshold = 1e-10 * n;
    if !(sum.abs() >= threshold) {
        return Err(Error::DegenerateWeights { sum, threshold });
    }
    let num: f64 = weights.iter().zip(mu1.iter().zip(mu0)).map(|(w, (a, b))| w * (a - b)).sum();
    Ok(num / sum)
}

/// Regression-imputation MIE from fitted nuisances.
pub fn mie_ri_from_fit(fit: &UnconfoundedFit, family: &InterventionFamily) -> Result<f64> {
    let w: Vec<f64> = fit.fitted_p0.iter().map(|&p| family.lambda(p)).collect::<Result<_>>()?;
    weighted_cate(&w, &fit.fitted_mu1, &fit.fitted_mu0)
}

/// `Σ λ(p̂ᵢ)(μ̂₁ − μ̂₀)(Xᵢ) / Σ λ(p̂ᵢ)`.
pub fn estimate_mie_ri(data: &Dataset, family: &InterventionFamily, opts: &UnconfoundedOptions) -> Result<EstimateReport> {
    let fit = fit_unconfounded(data, opts, true)?;
    let point = mie_ri_from_fit(&fit, family)?;
    let r = EstimateReport::new(label(EstimandKind::mie(Regime::Unconfounded), family.name()), "ri", point, fit.n_used());
    Ok(fit.diagnostics(r))
}

/// Plug-in IE: `Σ (π_δ(p̂ᵢ) − p̂ᵢ) τ̂ᵢ / Σ (π_δ(p̂ᵢ) − p̂ᵢ)`.
pub fn estimate_ie(
    data: &Dataset,
    family: &InterventionFamily,
    delta: f64,
    opts: &UnconfoundedOptions,
) -> Result<EstimateReport> {
    let kind = EstimandKind::ie(delta, Regime::Unconfounded)?;
    let fit = fit_unconfounded(data, opts, true)?;
    let point = ie_from_fit(&fit, family, delta)?;
    Ok(fit.diagnostics(EstimateReport::new(label(kind, family.name()), "ri", point, fit.n_used())))
}

pub fn ie_from_fit(fit: &UnconfoundedFit, family: &InterventionFamily, delta: f64) -> Result<f64> {
    let w: Vec<f64> = fit.fitted_p0.iter().map(|&p| Ok(family.pi_delta(p, delta)? - p)).collect::<Result<_>>()?;
    weighted_cate(&w, &fit.fitted_mu1, &fit.fitted_mu0)
}

/// Hájek IPW weights `(treated, control)` for a scheme.
pub fn ipw_weights(scheme: WeightScheme, p: f64) -> (f64, f64) {
    match scheme {
        WeightScheme::Ate => (1.0 / p, 1.0 / (1.0 - p)),
        WeightScheme::Att => (1.0, p / (1.0 - p)),
        WeightScheme::Atu => ((1.0 - p) / p, 1.0),
        WeightScheme::Ato => (1.0 - p, p),
    }
}

/// Point estimate and largest normalized weight.
pub fn ipw_from_fit(fit: &UnconfoundedFit, a: &[f64], y: &[f64], scheme: WeightScheme) -> Result<(f64, f64)> {
    let (mut s1, mut s0, mut n1, mut n0, mut max1, mut max0) = (0.0, 0.0, 0.0, 0.0, 0.0f64, 0.0f64);
    for (i, &p) in fit.fitted_p0.iter().enumerate() {
        let (w1, w0) = ipw_weights(scheme, p);
        if a[i] == 1.0 {
            s1 += w1;
            n1 += w1 * y[i];
            max1 = max1.max(w1);
        } else {
            s0 += w0;
            n0 += w0 * y[i];
            max0 = max0.max(w0);
        }
    }
    let threshold = 1e-10 * fit.fitted_p0.len() as f64;
    for sum in [s1, s0] {
        if !(sum > threshold) {
            return Err(Error::DegenerateWeights { sum, threshold });
        }
    }
    Ok((n1 / s1 - n0 / s0, (max1 / s1).max(max0 / s0)))
}

/// Hájek-normalized weighted difference in means.
pub fn estimate_ipw(data: &Dataset, scheme: WeightScheme, opts: &UnconfoundedOptions) -> Result<EstimateReport> {
    let fit = fit_unconfounded(data, opts, false)?;
    let d = rows_view(data, &fit);
    let (point, max_w) = ipw_from_fit(&fit, d.a(), d.y(), scheme)?;
    let family = scheme.family();
    let r = EstimateReport::new(label(EstimandKind::mie(Regime::Unconfounded), family.name()), "ipw", point, fit.n_used())
        .diag("max_normalized_weight", max_w)
        .diag("extreme_weight_warning", f64::from(u8::from(max_w > 0.1)));
    Ok(fit.diagnostics(r))
}

fn rows_view<'a>(data: &'a Dataset, fit: &UnconfoundedFit) -> std::borrow::Cow<'a, Dataset> {
    if fit.rows.len() == data.n() {
        std::borrow::Cow::Borrowed(data)
    } else {
        std::borrow::Cow::Owned(data.select_rows(&fit.rows))
    }
}

/// Out-of-fold predictions `(p̂, Ê[Y|X], μ̂₁, μ̂₀)`; in-sample when
/// cross-fitting is disabled.
struct CrossFit {
    p: Vec<f64>,
    m_y: Vec<f64>,
    mu1: Vec<f64>,
    mu0: Vec<f64>,
    clipped: (usize, usize),
}

#[derive(Clone, Copy, PartialEq)]
enum Need {
    OutcomeMean,
    ArmMeans,
}

/// Held-out propensity, outcome mean, mu1 and mu0 predictions.
type FoldPredictions = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn cross_fit(data: &Dataset, opts: &UnconfoundedOptions, need: Need) -> Result<CrossFit> {
    let n = data.n();
    let kind = opts.outcome.resolve(data.y());
    let fit_fold = |train: &Dataset, test: &DMatrix<f64>| -> Result<FoldPredictions> {
        let prop = fit_propensity(train.x(), train.a(), opts.propensity)?;
        let p = prop.predict(test);
        match need {
            Need::OutcomeMean => {
                let m = Regression::fit(train.x(), train.y(), kind)?;
                Ok((p, m.predict(test), Vec::new(), Vec::new()))
            }
            Need::ArmMeans => {
                let o = OutcomeFit::fit(train.x(), train.a(), train.y(), kind, opts.pooled_outcome)?;
                let (m1, m0) = o.predict(test);
                Ok((p, Vec::new(), m1, m0))
            }
        }
    };
    let (mut p, mut m_y, mut mu1, mut mu0);
    if opts.crossfit_folds < 2 {
        (p, m_y, mu1, mu0) = fit_fold(data, data.x())?;
    } else {
        let folds = make_folds(n, opts.crossfit_folds, opts.fold_seed)?;
        p = vec![0.0; n];
        m_y = vec![0.0; if need == Need::OutcomeMean { n } else { 0 }];
        mu1 = vec![0.0; if need == Need::ArmMeans { n } else { 0 }];
        mu0 = mu1.clone();
        for f in 0..folds.k {
            let test = folds.test_rows(f);
            let train = data.select_rows(&folds.train_rows(f));
            train.ensure_both_arms()?;
            let (fp, fm, f1, f0) = fit_fold(&train, &data.x().select_rows(&test))?;
            for (k, &i) in test.iter().enumerate() {
                p[i] = fp[k];
                if need == Need::OutcomeMean {
                    m_y[i] = fm[k];
                } else {
                    mu1[i] = f1[k];
                    mu0[i] = f0[k];
                }
            }
        }
    }
    let clipped = clip_propensities(&mut p, opts.clip);
    Ok(CrossFit { p, m_y, mu1, mu0, clipped })
}

/// Robinson partialing-out: `Σ (Y − Ê[Y|X])(A − Ê[A|X]) / Σ (A − Ê[A|X])²`
/// with an influence-function standard error.
pub fn estimate_robinson(data: &Dataset, opts: &UnconfoundedOptions) -> Result<EstimateReport> {
    data.ensure_valid()?;
    data.ensure_both_arms()?;
    let cf = cross_fit(data, opts, Need::OutcomeMean)?;
    let n = data.n();
    let ra: Vec<f64> = (0..n).map(|i| data.a()[i] - cf.p[i]).collect();
    let ry: Vec<f64> = (0..n).map(|i| data.y()[i] - cf.m_y[i]).collect();
    let den: f64 = ra.iter().map(|r| r * r).sum();
    if !(den >= 1e-10) {
        return Err(Error::ZeroDenominator(den));
    }
    let tau = ra.iter().zip(&ry).map(|(a, y)| a * y).sum::<f64>() / den;
    let scale = den / n as f64;
    let scores: Vec<f64> = (0..n).map(|i| ra[i] * (ry[i] - tau * ra[i]) / scale).collect();
    let r = EstimateReport::new(label(EstimandKind::mie(Regime::Unconfounded), "ipsi"), "robinson", tau, n)
        .with_std_error(eif_variance(&scores))
        .diag("crossfit_folds", opts.crossfit_folds as f64)
        .diag("clipped_low", cf.clipped.0 as f64)
        .diag("clipped_high", cf.clipped.1 as f64);
    Ok(r)
}

/// Cross-fitted augmented IPW for ATE, ATT or ATU.
pub fn estimate_aipw(data: &Dataset, scheme: WeightScheme, opts: &UnconfoundedOptions) -> Result<EstimateReport> {
    if scheme == WeightScheme::Ato {
        return Err(Error::Spec("AIPW covers ATE/ATT/ATU; use the partialing-out estimator for ATO".into()));
    }
    data.ensure_valid()?;
    data.ensure_both_arms()?;
    let cf = cross_fit(data, opts, Need::ArmMeans)?;
    let (theta, scores) = aipw_scores(scheme, data.a(), data.y(), &cf.p, &cf.mu1, &cf.mu0)?;
    let family = scheme.family();
    Ok(EstimateReport::new(label(EstimandKind::mie(Regime::Unconfounded), family.name()), "aipw", theta, data.n())
        .with_std_error(eif_variance(&scores))
        .diag("crossfit_folds", opts.crossfit_folds as f64)
        .diag("clipped_low", cf.clipped.0 as f64)
        .diag("clipped_high", cf.clipped.1 as f64))
}

/// Point estimate and centred influence scores.
pub fn aipw_scores(
    scheme: WeightScheme,
    a: &[f64],
    y: &[f64],
    p: &[f64],
    mu1: &[f64],
    mu0: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = a.len();
    let nf = n as f64;
    let (terms, share): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| {
            let (ai, yi, pi) = (a[i], y[i], p[i]);
            match scheme {
                WeightScheme::Ate => {
                    (mu1[i] - mu0[i] + ai * (yi - mu1[i]) / pi - (1.0 - ai) * (yi - mu0[i]) / (1.0 - pi), 1.0)
                }
                WeightScheme::Att => (ai * (yi - mu0[i]) - (1.0 - ai) * pi * (yi - mu0[i]) / (1.0 - pi), ai),
                WeightScheme::Atu => ((1.0 - ai) * (mu1[i] - yi) + ai * (1.0 - pi) * (yi - mu1[i]) / pi, 1.0 - ai),
                WeightScheme::Ato => unreachable!("rejected by caller"),
            }
        })
        .unzip();
    let share_mean = share.iter().sum::<f64>() / nf;
    if !(share_mean > 0.0) {
        return Err(Error::DegenerateWeights { sum: share_mean * nf, threshold: 0.0 });
    }
    let theta = terms.iter().sum::<f64>() / (share_mean * nf);
    let scores = (0..n).map(|i| (terms[i] - share[i] * theta) / share_mean).collect();
    Ok((theta, scores))
}

/// Overlap-weighted covariate mean difference between arms, per column.
pub fn ato_balance(x: &DMatrix<f64>, a: &[f64], p: &[f64]) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| {
            let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..x.nrows() {
                if a[i] == 1.0 {
                    s1 += (1.0 - p[i]) * x[(i, j)];
                    w1 += 1.0 - p[i];
                } else {
                    s0 += p[i] * x[(i, j)];
                    w0 += p[i];
                }
            }
            s1 / w1 - s0 / w0
        })
        .collect()
}
