//! Normal switching-regression model fitted by maximum likelihood.
//!
//! Selection is probit-normalized (`σ_V = 1`). Per arm `a` the outcome
//! error has SD `σₐ` and correlation `ρₐ` with `V`; the selection
//! covariance of the gain is `σ_ηV = σ₁ρ₁ − σ₀ρ₀`. Optimization runs over
//! `(β₀, β₁, γ, ln σ₀, atanh ρ₀, ln σ₁, atanh ρ₁)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::MteModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{fit_ols_with_intercept, fit_probit, IrlsOptions};
use crate::linalg::with_intercept;
use crate::optim::{bfgs, gradient_check, numerical_hessian, BfgsOptions};
use crate::par;
use crate::special::{inverse_mills, normal_log_cdf, normal_quantile, normal_quantile_integral};

const RHO_LIMIT: f64 = 0.999;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Parameters of the switching regression on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingParams {
    /// Intercept first, then the covariates.
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    /// Intercept first, then the columns of `z`.
    pub gamma: Vec<f64>,
    pub sigma0: f64,
    pub rho0: f64,
    pub sigma1: f64,
    pub rho1: f64,
}

impl SwitchingParams {
    fn pack(&self) -> DVector<f64> {
        let mut v: Vec<f64> = Vec::new();
        v.extend(&self.beta0);
        v.extend(&self.beta1);
        v.extend(&self.gamma);
        v.extend([self.sigma0.ln(), self.rho0.atanh(), self.sigma1.ln(), self.rho1.atanh()]);
        DVector::from_vec(v)
    }

    fn unpack(theta: &DVector<f64>, k: usize, m: usize) -> Self {
        let t = theta.as_slice();
        SwitchingParams {
            beta0: t[..k].to_vec(),
            beta1: t[k..2 * k].to_vec(),
            gamma: t[2 * k..2 * k + m].to_vec(),
            sigma0: t[2 * k + m].exp(),
            rho0: t[2 * k + m + 1].tanh(),
            sigma1: t[2 * k + m + 2].exp(),
            rho1: t[2 * k + m + 3].tanh(),
        }
    }
}

/// Fitted normal switching-regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoySwitchingModel {
    pub params: SwitchingParams,
    /// `σ_ηV = σ₁ρ₁ − σ₀ρ₀`.
    pub sigma_eta_v: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Standard errors of `β₁ − β₀` (intercept first).
    pub beta_diff_se: Vec<f64>,
    pub sigma_eta_v_se: f64,
    /// Standard errors of `(σ₀, ρ₀, σ₁, ρ₁)`.
    pub error_se: [f64; 4],
    /// Largest relative gradient disagreement with central differences.
    pub gradient_check: f64,
}

impl RoySwitchingModel {
    pub fn beta_diff(&self) -> Vec<f64> {
        self.params.beta1.iter().zip(&self.params.beta0).map(|(a, b)| a - b).collect()
    }

    fn cate(&self, x: &[f64]) -> f64 {
        let d = self.beta_diff();
        d[0] + d[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// `(β₁−β₀)ᵀx + σ_ηV Φ⁻¹(u)`.
pub fn mte_normal(model: &RoySwitchingModel, x: &[f64], u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("MTE needs u in (0, 1), got {u}")));
    }
    Ok(model.cate(x) + model.sigma_eta_v * normal_quantile(u))
}

impl MteModel for RoySwitchingModel {
    fn method(&self) -> &'static str {
        "normal-mle"
    }

    fn mte(&self, x: &[f64], u: f64) -> Result<f64> {
        mte_normal(self, x, u)
    }

    fn mte_integral(&self, x: &[f64], a: f64, b: f64) -> Result<f64> {
        Ok(self.cate(x) * (b - a) + self.sigma_eta_v * normal_quantile_integral(a, b))
    }

    fn propensity(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let g = &self.params.gamma;
        (0..z.nrows())
            .map(|i| crate::special::normal_cdf(g[0] + (0..z.ncols()).map(|j| g[j + 1] * z[(i, j)]).sum::<f64>()))
            .collect()
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// `β₀ᵀx + (β₁−β₀)ᵀx·p + K(p)` with `K(p) = −σ_ηV φ(Φ⁻¹(p))`.
    fn conditional_mean(&self, x: &[f64], p: f64) -> Result<f64> {
        let b0 = &self.params.beta0;
        let base = b0[0] + b0[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        Ok(base + self.cate(x) * p + self.sigma_eta_v * normal_quantile_integral(0.0, p))
    }
}

/// Data arranged for likelihood evaluation.
struct Design {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
}

/// Per-row log likelihood and (optionally) its gradient in the packed
/// parameterization.
fn row_terms(d: &Design, theta: &[f64], i: usize, grad: Option<&mut [f64]>) -> f64 {
    let (k, m) = (d.x.ncols(), d.z.ncols());
    let treated = d.a[i] == 1.0;
    let off = if treated { k } else { 0 };
    let mut xb = 0.0;
    for j in 0..k {
        xb += theta[off + j] * d.x[(i, j)];
    }
    let mut g = 0.0;
    for j in 0..m {
        g += theta[2 * k + j] * d.z[(i, j)];
    }
    let base = 2 * k + m + if treated { 2 } else { 0 };
    let (ls, al) = (theta[base], theta[base + 1]);
    let s = ls.exp();
    let r = al.tanh();
    let q = (1.0 - r * r).sqrt();
    let c = if treated { 1.0 } else { -1.0 };
    let u = (d.y[i] - xb) / s;
    let t = c * (g - r * u) / q;
    let ll = -ls - HALF_LN_2PI - 0.5 * u * u + normal_log_cdf(t);
    if let Some(gr) = grad {
        let mills = inverse_mills(t);
        let dbeta = (u + mills * c * r / q) / s;
        for j in 0..k {
            gr[off + j] += dbeta * d.x[(i, j)];
        }
        let dg = mills * c / q;
        for j in 0..m {
            gr[2 * k + j] += dg * d.z[(i, j)];
        }
        gr[base] += -1.0 + u * u + mills * c * r * u / q;
        gr[base + 1] += mills * c * (g * r - u) / q;
    }
    ll
}

/// Mean log likelihood and its gradient.
fn mean_loglik(d: &Design, theta: &[f64], with_grad: bool) -> (f64, Vec<f64>) {
    let n = d.y.len();
    let p = theta.len();
    let parts = par::chunked(n, |range| {
        let mut g = vec![0.0; if with_grad { p } else { 0 }];
        let mut ll = 0.0;
        for i in range {
            ll += row_terms(d, theta, i, if with_grad { Some(&mut g) } else { None });
        }
        (ll, g)
    });
    let mut ll = 0.0;
    let mut g = vec![0.0; if with_grad { p } else { 0 }];
    for (l, gp) in parts {
        ll += l;
        for (a, b) in g.iter_mut().zip(gp) {
            *a += b;
        }
    }
    let nf = n as f64;
    (ll / nf, g.into_iter().map(|v| v / nf).collect())
}

fn design(data: &Dataset) -> Result<Design> {
    data.ensure_valid()?;
    data.ensure_both_arms()?;
    let z = data.ensure_instruments()?;
    if z.ncols() <= data.x().ncols() {
        return Err(Error::Spec("instruments must include at least one column excluded from x".into()));
    }
    Ok(Design { x: with_intercept(data.x()), z: with_intercept(z), a: data.a().to_vec(), y: data.y().to_vec() })
}

/// Total log likelihood of `params` on `data`.
pub fn switching_log_likelihood(data: &Dataset, params: &SwitchingParams) -> Result<f64> {
    let d = design(data)?;
    let (ll, _) = mean_loglik(&d, params.pack().as_slice(), false);
    Ok(ll * data.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { max_iter: 1000, grad_tol: 1e-7 }
    }
}

/// Maximum likelihood from a probit/OLS warm start.
pub fn fit_normal_switching_mle(data: &Dataset, opts: &MleOptions) -> Result<RoySwitchingModel> {
    let d = design(data)?;
    let (k, m) = (d.x.ncols(), d.z.ncols());
    let n = data.n();

    let probit = fit_probit(&d.z, &d.a, IrlsOptions::default())?;
    let arm = |t: f64| -> Result<(Vec<f64>, f64)> {
        let rows: Vec<usize> = (0..n).filter(|&i| d.a[i] == t).collect();
        let xa = data.x().select_rows(&rows);
        let ya: Vec<f64> = rows.iter().map(|&i| d.y[i]).collect();
        let fit = fit_ols_with_intercept(&xa, &ya)?;
        Ok((fit.coefficients, fit.residual_variance.sqrt().max(1e-3)))
    };
    let (b0, s0) = arm(0.0)?;
    let (b1, s1) = arm(1.0)?;
    let start = SwitchingParams { beta0: b0, beta1: b1, gamma: probit.coefficients, sigma0: s0, rho0: 0.0, sigma1: s1, rho1: 0.0 };

    let objective = |th: &DVector<f64>| {
        let (ll, g) = mean_loglik(&d, th.as_slice(), true);
        let v = if ll.is_finite() { -ll } else { f64::INFINITY };
        (v, -DVector::from_vec(g))
    };
    let res = bfgs(objective, start.pack(), BfgsOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol });
    let params = SwitchingParams::unpack(&res.x, k, m);
    for r in [params.rho0, params.rho1] {
        if r.abs() > RHO_LIMIT {
            return Err(Error::RhoBoundary { rho: r });
        }
    }
    if !res.converged {
        return Err(Error::NotConverged {
            iterations: res.iterations,
            detail: format!("switching likelihood, max |gradient| {:.3e}", res.gradient.amax()),
        });
    }

    let x0 = start.pack();
    let g0 = -DVector::from_vec(mean_loglik(&d, x0.as_slice(), true).1);
    let check = gradient_check(|th| -mean_loglik(&d, th.as_slice(), false).0, &g0, &x0, 1e-5);
    let hess = numerical_hessian(|th| -DVector::from_vec(mean_loglik(&d, th.as_slice(), true).1), &res.x, 1e-5);
    let cov = hess.try_inverse().map(|h| h / n as f64);

    let p = res.x.len();
    let e = 2 * k + m;
    let se_of = |grad: &DVector<f64>| cov.as_ref().map_or(f64::NAN, |c| (grad.transpose() * c * grad)[(0, 0)].max(0.0).sqrt());
    let beta_diff_se = (0..k)
        .map(|j| {
            let mut g = DVector::zeros(p);
            g[k + j] = 1.0;
            g[j] = -1.0;
            se_of(&g)
        })
        .collect();
    let sigma_eta_v = params.sigma1 * params.rho1 - params.sigma0 * params.rho0;
    let mut g = DVector::zeros(p);
    g[e] = -params.sigma0 * params.rho0;
    g[e + 1] = -params.sigma0 * (1.0 - params.rho0.powi(2));
    g[e + 2] = params.sigma1 * params.rho1;
    g[e + 3] = params.sigma1 * (1.0 - params.rho1.powi(2));
    let sigma_eta_v_se = se_of(&g);
    let unit = |idx: usize, scale: f64| {
        let mut g = DVector::zeros(p);
        g[idx] = scale;
        se_of(&g)
    };
    let error_se = [
        unit(e, params.sigma0),
        unit(e + 1, 1.0 - params.rho0.powi(2)),
        unit(e + 2, params.sigma1),
        unit(e + 3, 1.0 - params.rho1.powi(2)),
    ];
    Ok(RoySwitchingModel {
        params,
        sigma_eta_v,
        log_likelihood: -res.value * n as f64,
        converged: res.converged,
        iterations: res.iterations,
        beta_diff_se,
        sigma_eta_v_se,
        error_se,
        gradient_check: check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_roy, RoyDgp, Sampler, SelectionLink};

    fn dgp(rho_eta_v: f64, rho_eps_v: f64) -> RoyDgp {
        RoyDgp {
            covariates: vec![Sampler::Normal { mean: 0.0, sd: 1.0 }],
            instruments: vec![Sampler::Normal { mean: 0.0, sd: 1.0 }],
            gamma: vec![0.1, 0.3, 1.0],
            beta0: vec![1.0, 0.5],
            beta1: vec![1.4, 0.7],
            sigma_eps: 0.5,
            sigma_eta: 1.0,
            rho_eps_v,
            rho_eta_v,
            rho_eps_eta: 0.0,
            selection_link: SelectionLink::Probit,
        }
    }

    fn truth(d: &RoyDgp) -> SwitchingParams {
        let (s0, r0, s1, r1) = d.identified();
        SwitchingParams { beta0: d.beta0.clone(), beta1: d.beta1.clone(), gamma: d.gamma.clone(), sigma0: s0, rho0: r0, sigma1: s1, rho1: r1 }
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let d = dgp(-0.5, 0.2);
        let data = generate_roy(&d, 500, 1).unwrap();
        let des = design(&data).unwrap();
        let mut th = truth(&d).pack();
        th[0] += 0.1;
        let last = th.len() - 1;
        th[last] += 0.2;
        let (_, g) = mean_loglik(&des, th.as_slice(), true);
        let g = DVector::from_vec(g);
        let rel = gradient_check(|t| mean_loglik(&des, t.as_slice(), false).0, &g, &th, 1e-5);
        assert!(rel < 1e-4, "{rel}");
    }

    #[test]
    fn truth_beats_perturbations() {
        let d = dgp(-0.5, 0.2);
        let data = generate_roy(&d, 20_000, 2).unwrap();
        let t = truth(&d);
        let l0 = switching_log_likelihood(&data, &t).unwrap();
        let th = t.pack();
        for j in 0..th.len() {
            for s in [-0.1, 0.1] {
                let mut p = th.clone();
                p[j] += s;
                let k = d.beta0.len();
                let l = switching_log_likelihood(&data, &SwitchingParams::unpack(&p, k, d.gamma.len())).unwrap();
                assert!(l0 >= l, "coordinate {j}");
            }
        }
    }

    #[test]
    fn recovers_parameters() {
        let d = dgp(-0.5, 0.0);
        let data = generate_roy(&d, 20_000, 5).unwrap();
        let fit = fit_normal_switching_mle(&data, &MleOptions::default()).unwrap();
        assert!(fit.gradient_check < 1e-4);
        let diff = fit.beta_diff();
        for (j, want) in [0.4, 0.2].iter().enumerate() {
            assert!((diff[j] - want).abs() < 4.0 * fit.beta_diff_se[j], "{j}: {} ± {}", diff[j], fit.beta_diff_se[j]);
        }
        assert!((fit.sigma_eta_v + 0.5).abs() < 4.0 * fit.sigma_eta_v_se);
        assert!(mte_normal(&fit, &[0.3], 0.2).unwrap() > mte_normal(&fit, &[0.3], 0.8).unwrap());
    }

    #[test]
    fn no_selection_gives_flat_mte() {
        let d = dgp(0.0, 0.0);
        let data = generate_roy(&d, 10_000, 8).unwrap();
        let fit = fit_normal_switching_mle(&data, &MleOptions::default()).unwrap();
        assert!(fit.params.rho0.abs() < 4.0 * fit.error_se[1]);
        assert!(fit.params.rho1.abs() < 4.0 * fit.error_se[3]);
        assert!(fit.sigma_eta_v.abs() < 4.0 * fit.sigma_eta_v_se);
    }

    #[test]
    fn mte_domain_and_midpoint() {
        let d = dgp(-0.5, 0.0);
        let data = generate_roy(&d, 3000, 5).unwrap();
        let fit = fit_normal_switching_mle(&data, &MleOptions::default()).unwrap();
        assert!(mte_normal(&fit, &[1.0], 0.0).is_err());
        let diff = fit.beta_diff();
        assert!((mte_normal(&fit, &[1.0], 0.5).unwrap() - (diff[0] + diff[1])).abs() < 1e-12);
    }
}
