//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any check fails. `ACCEPTANCE_ONLY=1,6` runs a subset.

use std::process::ExitCode;
use std::time::Instant;

use mie_cli::config::{EstimateSection, EstimatorKind};
use mie_cli::report::Record;
use mie_cli::rhc;
use mie_cli::run::{estimate_all, run_estimate, run_replicate_rhc, Plan};
use mie_cli::{MachineReport, ResultTable, RunConfig};
use mie_core::dgp::{
    generate_roy, generate_unconfounded, oracle_ie_iv, oracle_ie_unconfounded, oracle_mie_iv, oracle_mie_unconfounded,
    PropensityLink, PropensitySpec, RoyDgp, Sampler, SelectionLink, TauSpec, UnconfoundedDgp,
};
use mie_core::inference::BootstrapPlan;
use mie_core::iv::{
    estimate_ie_mte, estimate_mie_doubly_robust, estimate_mie_plugin, fit_location_shift, fit_normal_switching_mle,
    fit_semiparametric_liv, fitted_propensities, LocationShiftOptions, MeanLink, ScoreKind, SemiparametricOptions,
};
use mie_core::nuisance::{fit_propensity, OutcomeKind, PropensityModel};
use mie_core::special::normal_quantile;
use mie_core::unconfounded::{
    ato_balance, estimate_robinson, fit_unconfounded, ie_from_fit, mie_ri_from_fit, UnconfoundedOptions,
};
use mie_core::{CustomLambda, Dataset, InterventionFamily, MtpPolicy};
use nalgebra::DMatrix;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

type Check = fn() -> Outcome;

fn unconfounded_dgp() -> UnconfoundedDgp {
    UnconfoundedDgp {
        covariates: vec![Sampler::Uniform { low: -1.0, high: 1.0 }, Sampler::Normal { mean: 0.0, sd: 1.0 }],
        propensity: PropensitySpec { link: PropensityLink::Logit, coefficients: vec![0.2, 0.8, -0.5] },
        tau: TauSpec::Linear { coefficients: vec![1.0, 1.5, 0.5] },
        mu0: vec![0.0, 1.0, 1.0],
        noise_sd: 1.0,
    }
}

fn roy_dgp() -> RoyDgp {
    RoyDgp {
        covariates: vec![Sampler::Uniform { low: -1.0, high: 1.0 }],
        instruments: vec![Sampler::Normal { mean: 0.0, sd: 1.0 }],
        gamma: vec![0.0, 0.3, 1.0],
        beta0: vec![1.0, 0.5],
        beta1: vec![1.2, 0.9],
        sigma_eps: 1.0,
        sigma_eta: 1.0,
        rho_eps_v: 0.2,
        rho_eta_v: -0.5,
        rho_eps_eta: 0.0,
        selection_link: SelectionLink::Probit,
    }
}

fn unconfounded_estimates(
    data: &Dataset,
    estimators: &[EstimatorKind],
    est: &EstimateSection,
    replications: usize,
    seed: u64,
) -> Vec<Record> {
    let families = InterventionFamily::stylized();
    let plan = Plan::new(&families, &[], est);
    let boot = BootstrapPlan::new(replications, seed);
    estimate_all(data, estimators, &plan, Some(&boot)).expect("estimation succeeds")
}

fn c1_oracle_recovery() -> Outcome {
    let dgp = unconfounded_dgp();
    let families = InterventionFamily::stylized();
    let truth: Vec<f64> = families.iter().map(|f| oracle_mie_unconfounded(&dgp, f).unwrap().value).collect();
    let est = EstimateSection::default();
    let kinds = [EstimatorKind::Ipw, EstimatorKind::Ri, EstimatorKind::Dml];
    let mut hits = std::collections::BTreeMap::<(String, String), usize>::new();
    for seed in 0..20u64 {
        let data = generate_unconfounded(&dgp, 5000, 1000 + seed).unwrap();
        for r in unconfounded_estimates(&data, &kinds, &est, 200, seed) {
            let k = families.iter().position(|f| f.name() == r.row).unwrap();
            let se = r.report.std_error.unwrap();
            let hit = (r.report.point - truth[k]).abs() <= 3.0 * se;
            *hits.entry((r.column, r.row)).or_default() += usize::from(hit);
        }
    }
    let worst = hits.iter().min_by_key(|e| e.1).unwrap();
    verdict(
        hits.len() == 12 && *worst.1 >= 18,
        format!("{} cells, worst {}/{} = {}/20 within 3 SE", hits.len(), worst.0 .0, worst.0 .1, worst.1),
    )
}

fn c2_closed_form() -> Outcome {
    let dgp = UnconfoundedDgp {
        covariates: vec![Sampler::Uniform { low: 0.0, high: 1.0 }],
        propensity: PropensitySpec { link: PropensityLink::Linear, coefficients: vec![0.0, 1.0] },
        tau: TauSpec::Linear { coefficients: vec![0.0, 1.0] },
        mu0: vec![0.0, 1.0],
        noise_sd: 1.0,
    };
    let ipsi = InterventionFamily::ipsi();
    let oracle = oracle_mie_unconfounded(&dgp, &ipsi).unwrap().value;
    let data = generate_unconfounded(&dgp, 20000, 2).unwrap();
    let opts = UnconfoundedOptions { propensity: PropensityModel::Linear, ..Default::default() };
    let fit = fit_unconfounded(&data, &opts, true).unwrap();
    let ri = mie_ri_from_fit(&fit, &ipsi).unwrap();
    verdict(
        (oracle - 0.5).abs() < 1e-9 && (ri - 0.5).abs() <= 0.02,
        format!("oracle {oracle:.12}, RI {ri:.4}"),
    )
}

fn c3_constant_effect() -> Outcome {
    let noisy = UnconfoundedDgp { tau: TauSpec::Constant { value: 1.7 }, ..unconfounded_dgp() };
    let data = generate_unconfounded(&noisy, 5000, 3).unwrap();
    let kinds = [EstimatorKind::Ipw, EstimatorKind::Ri, EstimatorKind::Aipw, EstimatorKind::Robinson];
    let recs = unconfounded_estimates(&data, &kinds, &EstimateSection::default(), 200, 3);
    let worst = recs
        .iter()
        .map(|r| ((r.report.point - 1.7).abs() / r.report.std_error.unwrap(), r))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    let exact = UnconfoundedDgp { noise_sd: 0.0, ..noisy };
    let data = generate_unconfounded(&exact, 2000, 4).unwrap();
    let fit = fit_unconfounded(&data, &UnconfoundedOptions::default(), true).unwrap();
    let max_dev = InterventionFamily::stylized()
        .iter()
        .map(|f| (mie_ri_from_fit(&fit, f).unwrap() - 1.7).abs())
        .fold(0.0, f64::max);
    verdict(
        recs.len() == 12 && worst.0 <= 3.0 && max_dev <= 1e-10,
        format!(
            "{} estimates, worst {}/{} at {:.2} SE; noiseless RI max deviation {max_dev:.1e}",
            recs.len(),
            worst.1.column,
            worst.1.row,
            worst.0
        ),
    )
}

fn c4_ato_balance() -> Outcome {
    let dgp = UnconfoundedDgp {
        covariates: vec![
            Sampler::Uniform { low: -1.0, high: 1.0 },
            Sampler::Normal { mean: 0.0, sd: 1.0 },
            Sampler::Bernoulli { p: 0.3 },
        ],
        propensity: PropensitySpec { link: PropensityLink::Logit, coefficients: vec![0.1, 1.0, -0.7, 0.5] },
        tau: TauSpec::Constant { value: 1.0 },
        mu0: vec![0.0, 1.0, 1.0, 1.0],
        noise_sd: 1.0,
    };
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let data = generate_unconfounded(&dgp, 3000, 40 + seed).unwrap();
        let p = fit_propensity(data.x(), data.a(), PropensityModel::Logit).unwrap().predict(data.x());
        worst = ato_balance(data.x(), data.a(), &p).iter().fold(worst, |m, v| m.max(v.abs()));
    }
    verdict(worst <= 1e-6, format!("max overlap-weighted mean difference {worst:.2e} over 10 draws"))
}

fn c5_robinson_is_ato_ri() -> Outcome {
    let dgp = UnconfoundedDgp {
        covariates: vec![Sampler::Bernoulli { p: 0.4 }, Sampler::Bernoulli { p: 0.6 }],
        propensity: PropensitySpec { link: PropensityLink::Logit, coefficients: vec![-0.3, 1.0, 0.6] },
        tau: TauSpec::Linear { coefficients: vec![1.0, 0.8, -0.5] },
        mu0: vec![0.0, 1.0, -1.0],
        noise_sd: 1.0,
    };
    let raw = generate_unconfounded(&dgp, 4000, 5).unwrap();
    // Saturate: both indicators and their product.
    let x = DMatrix::from_fn(raw.n(), 3, |i, j| match j {
        2 => raw.x()[(i, 0)] * raw.x()[(i, 1)],
        _ => raw.x()[(i, j)],
    });
    let data = Dataset::new(x, raw.a().to_vec(), raw.y().to_vec());
    let opts = UnconfoundedOptions { crossfit_folds: 0, outcome: OutcomeKind::Continuous, ..Default::default() };
    let robinson = estimate_robinson(&data, &opts).unwrap().point;
    let fit = fit_unconfounded(&data, &opts, true).unwrap();
    let ri = mie_ri_from_fit(&fit, &InterventionFamily::ipsi()).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for s in 0..4 {
        let rows: Vec<usize> =
            (0..raw.n()).filter(|&i| raw.x()[(i, 0)] as usize * 2 + raw.x()[(i, 1)] as usize == s).collect();
        let mean = |arm: f64| {
            let v: Vec<f64> = rows.iter().filter(|&&i| raw.a()[i] == arm).map(|&i| raw.y()[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let p = rows.iter().map(|&i| raw.a()[i]).sum::<f64>() / rows.len() as f64;
        let w = rows.len() as f64 * p * (1.0 - p);
        num += w * (mean(1.0) - mean(0.0));
        den += w;
    }
    let brute = num / den;
    let gap = (robinson - ri).abs().max((robinson - brute).abs());
    verdict(gap <= 1e-8, format!("Robinson {robinson:.10}, RI-ATO {ri:.10}, strata {brute:.10}"))
}

fn low_noise_roy() -> RoyDgp {
    RoyDgp { sigma_eps: 0.2, sigma_eta: 0.5, rho_eta_v: -0.9, beta1: vec![1.0, 0.9], ..roy_dgp() }
}

fn c6_iv_recovery() -> Outcome {
    let dgp = roy_dgp();
    let truth_diff = dgp.beta_diff();
    let truth_s = dgp.sigma_eta_v();
    let mut hits = 0;
    for seed in 0..20u64 {
        let data = generate_roy(&dgp, 20000, 600 + seed).unwrap();
        let Ok(fit) = fit_normal_switching_mle(&data, &Default::default()) else { continue };
        let diff_ok = fit
            .beta_diff()
            .iter()
            .zip(&fit.beta_diff_se)
            .zip(&truth_diff)
            .all(|((b, se), t)| (b - t).abs() <= 3.0 * se);
        let s_ok = (fit.sigma_eta_v - truth_s).abs() <= 3.0 * fit.sigma_eta_v_se;
        hits += usize::from(diff_ok && s_ok);
    }
    let low = low_noise_roy();
    let data = generate_roy(&low, 20000, 5).unwrap();
    let opts = SemiparametricOptions {
        propensity: PropensityModel::Probit,
        step4_bandwidth: Some(0.1),
        ..Default::default()
    };
    let fit = fit_semiparametric_liv(&data, &opts).unwrap();
    let s = low.sigma_eta_v();
    let kerr = (0..=60)
        .map(|k| {
            let p = 0.2 + 0.01 * k as f64;
            (fit.k_prime(p).unwrap() - s * normal_quantile(p)).abs()
        })
        .fold(0.0, f64::max);
    verdict(
        hits >= 18 && kerr <= 0.1,
        format!("MLE within 3 SE in {hits}/20 seeds; semiparametric max |K' error| {kerr:.3} on [0.2, 0.8]"),
    )
}

fn c7_no_selection() -> Outcome {
    let dgp = RoyDgp { rho_eps_v: 0.0, rho_eta_v: 0.0, ..roy_dgp() };
    let families = InterventionFamily::stylized();
    let sizes = [2000usize, 8000, 32000];
    let seeds = 4u64;
    let ri_opts = UnconfoundedOptions { propensity: PropensityModel::Probit, ..Default::default() };
    let mut mean_gap = vec![[0.0; 4]; sizes.len()];
    let mut within = true;
    for (s, &n) in sizes.iter().enumerate() {
        for seed in 0..seeds {
            let data = generate_roy(&dgp, n, 700 + seed).unwrap();
            let mle = fit_normal_switching_mle(&data, &Default::default()).unwrap();
            // Treatment is unconfounded given (X, Z) once selection is absent.
            let xz = Dataset::new(data.z().unwrap().clone(), data.a().to_vec(), data.y().to_vec());
            let fit = fit_unconfounded(&xz, &ri_opts, true).unwrap();
            for (k, f) in families.iter().enumerate() {
                let iv = estimate_mie_plugin(&mle, &data, f).unwrap().point;
                let ri = mie_ri_from_fit(&fit, f).unwrap();
                mean_gap[s][k] += (iv - ri).abs() / seeds as f64;
            }
            if n == 32000 && seed == 0 {
                let est = EstimateSection { unconfounded: ri_opts, ..Default::default() };
                for r in unconfounded_estimates(&xz, &[EstimatorKind::Ri], &est, 100, seed) {
                    let f = families.iter().find(|f| f.name() == r.row).unwrap();
                    let iv = estimate_mie_plugin(&mle, &data, f).unwrap().point;
                    within &= (iv - r.report.point).abs() <= 3.0 * r.report.std_error.unwrap();
                }
            }
        }
    }
    let shrinking = (0..4).all(|k| mean_gap[0][k] > mean_gap[1][k] && mean_gap[1][k] > mean_gap[2][k]);
    let fmt: Vec<String> = (0..sizes.len())
        .map(|s| format!("n={}: {}", sizes[s], mean_gap[s].iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join("/")))
        .collect();
    verdict(shrinking && within, format!("mean |IV - RI| {}; within 3 SE at 32k: {within}", fmt.join("; ")))
}

fn c8_double_robustness() -> Outcome {
    let dgp = RoyDgp {
        covariates: vec![Sampler::Uniform { low: 0.0, high: 1.0 }],
        instruments: vec![Sampler::Normal { mean: 0.0, sd: 1.0 }],
        gamma: vec![0.35, 0.3, 0.06],
        beta0: vec![1.0, 0.5],
        beta1: vec![1.2, 3.5],
        sigma_eps: 0.2,
        sigma_eta: 0.5,
        rho_eps_v: 0.2,
        rho_eta_v: -0.9,
        rho_eps_eta: 0.0,
        selection_link: SelectionLink::Linear,
    };
    // Outcome model without the covariate-by-propensity gain term.
    let misspecified = SemiparametricOptions {
        propensity: PropensityModel::Linear,
        interaction_columns: Some(vec![]),
        ..Default::default()
    };
    let density = LocationShiftOptions { link: MeanLink::Identity, score: ScoreKind::Normal };
    let families = InterventionFamily::stylized();
    let truth: Vec<f64> = families.iter().map(|f| oracle_mie_iv(&dgp, f).unwrap().value).collect();
    let (mut plug, mut dr) = (vec![Vec::new(); 4], vec![Vec::new(); 4]);
    for seed in 0..20u64 {
        let data = generate_roy(&dgp, 20000, 100 + seed).unwrap();
        let fit = fit_semiparametric_liv(&data, &misspecified).unwrap();
        let p = fitted_propensities(&fit, &data).unwrap();
        let dens = fit_location_shift(data.x(), &p, &density).unwrap();
        for (k, f) in families.iter().enumerate() {
            plug[k].push(estimate_mie_plugin(&fit, &data, f).unwrap().point);
            dr[k].push(estimate_mie_doubly_robust(&fit, &data, f, &dens).unwrap().point);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[9] + v[10])
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..4 {
        let bp = (median(&mut plug[k]) - truth[k]).abs();
        let bd = (median(&mut dr[k]) - truth[k]).abs();
        // The omitted interaction biases the plug-in only for the
        // asymmetric weights; elsewhere both biases are MC noise.
        let scored = matches!(families[k].name(), "multiplicative" | "equalizing");
        if scored {
            ok &= bd <= 0.5 * bp;
        }
        parts.push(format!("{} plug-in {bp:.4} DR {bd:.4}{}", families[k].name(), if scored { "" } else { " (info)" }));
    }
    verdict(ok, format!("median |bias|: {}", parts.join("; ")))
}

/// Strictly shrinking until the gap reaches rounding level, where the
/// linear families become exact once no propensity is clipped.
fn monotone(g: &[f64]) -> bool {
    const FLOOR: f64 = 1e-10;
    g.windows(2).all(|w| w[1] < w[0] || w[1] <= FLOOR)
}

fn c9_ie_to_mie() -> Outcome {
    let deltas = [0.1, 0.01, 0.001];
    let mut failures = Vec::new();
    let udgp = unconfounded_dgp();
    let data = generate_unconfounded(&udgp, 5000, 9).unwrap();
    let fit = fit_unconfounded(&data, &UnconfoundedOptions::default(), true).unwrap();
    let roy = roy_dgp();
    let ivdata = generate_roy(&roy, 5000, 9).unwrap();
    let mle = fit_normal_switching_mle(&ivdata, &Default::default()).unwrap();
    for f in InterventionFamily::stylized() {
        let mie = mie_ri_from_fit(&fit, &f).unwrap();
        let g: Vec<f64> = deltas.iter().map(|&d| (ie_from_fit(&fit, &f, d).unwrap() - mie).abs()).collect();
        let om = oracle_mie_unconfounded(&udgp, &f).unwrap().value;
        let og: Vec<f64> = deltas.iter().map(|&d| (oracle_ie_unconfounded(&udgp, &f, d).unwrap().value - om).abs()).collect();
        let mie_iv = estimate_mie_plugin(&mle, &ivdata, &f).unwrap().point;
        let gi: Vec<f64> =
            deltas.iter().map(|&d| (estimate_ie_mte(&mle, &ivdata, &f, d).unwrap().point - mie_iv).abs()).collect();
        let oi = oracle_mie_iv(&roy, &f).unwrap().value;
        let ogi: Vec<f64> = deltas.iter().map(|&d| (oracle_ie_iv(&roy, &f, d).unwrap().value - oi).abs()).collect();
        for (what, gaps) in [("RI", g), ("unconfounded oracle", og), ("normal plug-in", gi), ("IV oracle", ogi)] {
            if !monotone(&gaps) {
                failures.push(format!("{what}/{}: {gaps:?}", f.name()));
            }
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "gaps shrink for 4 families x {RI, normal plug-in, both oracles}".into()
        } else {
            failures.join("; ")
        },
    )
}

fn c10_intervention_calculus() -> Outcome {
    let mut families = InterventionFamily::stylized().to_vec();
    families.push(InterventionFamily::mtp(MtpPolicy::uniform_join()));
    families.push(InterventionFamily::mtp(MtpPolicy::propensity_join()));
    families.push(InterventionFamily::custom(CustomLambda::Polynomial {
        lambda_poly: mie_core::interventions::Polynomial(vec![0.2, 0.5, -0.3]),
    }));
    let mut worst = 0.0f64;
    let mut ok = true;
    for f in &families {
        for i in 1..=99 {
            let p = i as f64 / 100.0;
            let lam = f.lambda(p).unwrap();
            for h in [1e-4, 1e-6] {
                let err = (f.finite_difference_check(p, h).unwrap() - lam).abs();
                ok &= err <= 10.0 * h;
                worst = worst.max(err / h);
            }
        }
    }
    let mut odds = 0.0f64;
    let ipsi = InterventionFamily::ipsi();
    for i in 1..=99 {
        let p = i as f64 / 100.0;
        for delta in [0.01, 0.5, 1.0, 3.0] {
            let q = ipsi.pi_delta(p, delta).unwrap();
            odds = odds.max(((q / (1.0 - q)) / (p / (1.0 - p)) / f64::exp(delta) - 1.0).abs());
        }
    }
    verdict(
        ok && odds <= 1e-12,
        format!("{} families, worst |fd - lambda|/h {worst:.3}; IPSI odds error {odds:.1e}", families.len()),
    )
}

/// Table values x100: (family, IPW, RI, DML point, DML SE).
const PRINTED: [(&str, f64, f64, f64, f64); 4] = [
    ("additive", -5.43, -5.72, -4.56, 1.20),
    ("multiplicative", -5.62, -5.80, -5.13, 1.30),
    ("equalizing", -5.32, -5.67, -4.22, 1.33),
    ("ipsi", -5.88, -5.76, -5.15, 1.32),
];

fn c11_replication() -> Outcome {
    // Selection on gains: the equalizing family should have the largest MIE.
    let dgp = roy_dgp();
    let families = InterventionFamily::stylized();
    let oracle: Vec<f64> = families.iter().map(|f| oracle_mie_iv(&dgp, f).unwrap().value).collect();
    let data = generate_roy(&dgp, 20000, 11).unwrap();
    let mle = fit_normal_switching_mle(&data, &Default::default()).unwrap();
    let est: Vec<f64> = families.iter().map(|f| estimate_mie_plugin(&mle, &data, f).unwrap().point).collect();
    let largest = |v: &[f64]| (0..4).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap() == 2;
    let ordering = largest(&oracle) && largest(&est);
    let order_note = format!("equalizing largest (oracle and normal plug-in): {ordering}");
    let Some(path) = rhc::locate_local(None, &rhc::default_cache_dir()) else {
        let note = format!("RHC data not available offline (set {}); {order_note}", rhc::DATA_ENV);
        return if ordering { Outcome::Skip(note) } else { Outcome::Fail(note) };
    };
    let cfg = RunConfig {
        rhc: Some(mie_cli::config::RhcSection { path: Some(path), offline: true, ..Default::default() }),
        ..Default::default()
    };
    let report = match run_replicate_rhc(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("{}; {order_note}", e.one_line())),
    };
    let table = ResultTable::from_report(&report);
    let cell = |row: &str, col: &str| {
        let i = table.rows.iter().position(|r| r == row)?;
        let j = table.columns.iter().position(|c| c == col)?;
        table.cells[i][j]
    };
    let mut ok = ordering;
    let mut worst = (0.0f64, 0.0f64);
    for (fam, ipw, ri, dml, dml_se) in PRINTED {
        for (col, target) in [("IPW", ipw), ("RI", ri)] {
            let d = cell(fam, col).map_or(f64::INFINITY, |c| (c.point - target).abs());
            ok &= d <= 0.15;
            worst.0 = worst.0.max(d);
        }
        let d = cell(fam, "DML").map_or(f64::INFINITY, |c| (c.point - dml).abs());
        ok &= d <= dml_se;
        worst.1 = worst.1.max(d / dml_se);
    }
    verdict(
        ok,
        format!("worst IPW/RI gap {:.3} (tol 0.15), worst DML gap {:.2} printed SE; {order_note}", worst.0, worst.1),
    )
}

const DETERMINISM_CONFIG: &str = r#"
seed = 99
[dgp]
n = 1500
[dgp.unconfounded]
covariates = [{ dist = "uniform", low = -1, high = 1 }, { dist = "normal", mean = 0, sd = 1 }]
propensity = { link = "logit", coefficients = [0.2, 0.8, -0.5] }
tau = { form = "linear", coefficients = [1.0, 1.5, 0.5] }
mu0 = [0.0, 1.0, 1.0]
[estimate]
estimators = ["ipw", "ri", "dml"]
deltas = [0.05]
[bootstrap]
replications = 60
[oracle]
monte_carlo = true
draws = 20000
"#;

const DETERMINISM_IV_CONFIG: &str = r#"
seed = 5
[dgp]
n = 1500
[dgp.roy]
covariates = [{ dist = "uniform", low = -1, high = 1 }]
instruments = [{ dist = "normal", mean = 0, sd = 1 }]
gamma = [0.0, 0.3, 1.0]
beta0 = [1.0, 0.5]
beta1 = [1.2, 0.9]
sigma_eps = 1.0
sigma_eta = 1.0
rho_eps_v = 0.2
rho_eta_v = -0.5
[estimate]
estimators = ["normal-plugin", "dr-semiparametric"]
[bootstrap]
replications = 20
"#;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn c12_determinism() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, text) in [("unconfounded", DETERMINISM_CONFIG), ("iv", DETERMINISM_IV_CONFIG)] {
        let cfg = RunConfig::from_toml(text).unwrap();
        let runs: Vec<String> =
            [1, 4, 1].iter().map(|&t| in_pool(t, || run_estimate(&cfg).unwrap().to_json())).collect();
        let same = runs.windows(2).all(|w| w[0] == w[1]);
        let report = MachineReport::from_json(&runs[0]).unwrap();
        let round_trip = ResultTable::from_report(&report).render()
            == ResultTable::from_report(&run_estimate(&cfg).unwrap()).render();
        ok &= same && round_trip;
        notes.push(format!("{name}: identical across 1/4/1 threads {same}, table round trip {round_trip}"));
    }
    // Separate processes through the binary.
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, DETERMINISM_CONFIG).unwrap();
    let outs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = dir.path().join(format!("report-{t}.json"));
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_mie"))
                .args(["estimate", "--config"])
                .arg(&cfg_path)
                .args(["--threads", t, "--out"])
                .arg(&out)
                .stdout(std::process::Stdio::null())
                .status()
                .unwrap();
            assert!(status.success());
            std::fs::read(out).unwrap()
        })
        .collect();
    let bin_same = outs[0] == outs[1];
    ok &= bin_same;
    notes.push(format!("binary --threads 1 vs 3 byte-identical {bin_same}"));
    verdict(ok, notes.join("; "))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 12] = [
        ("oracle recovery, unconfounded", c1_oracle_recovery),
        ("closed-form oracle", c2_closed_form),
        ("constant-effect collapse", c3_constant_effect),
        ("ATO exact balance", c4_ato_balance),
        ("Robinson equals ATO-RI on saturated X", c5_robinson_is_ato_ri),
        ("IV parameter recovery", c6_iv_recovery),
        ("no-selection reduction", c7_no_selection),
        ("double robustness", c8_double_robustness),
        ("IE to MIE limit", c9_ie_to_mie),
        ("intervention calculus", c10_intervention_calculus),
        ("RHC table replication", c11_replication),
        ("determinism", c12_determinism),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id:>2} {tag} [{secs:.1}s] {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
