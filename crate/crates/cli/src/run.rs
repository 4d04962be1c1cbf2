//! Command dispatch: simulate, estimate, oracle and replicate-rhc.

use std::path::Path;

use mie_core::dgp::{
    generate_roy, generate_unconfounded, oracle_ie_iv, oracle_ie_unconfounded, oracle_mie_iv, oracle_mie_unconfounded,
    oracle_mie_unconfounded_mc, OracleResult,
};
use mie_core::inference::{bootstrap_multi, BootstrapPlan};
use mie_core::iv::{
    estimate_ie_mte, estimate_mie_doubly_robust, estimate_mie_plugin, fit_location_shift, fit_normal_switching_mle,
    fit_semiparametric_liv, fitted_propensities, MteModel,
};
use mie_core::unconfounded::{
    estimate_aipw, estimate_robinson, fit_unconfounded, ie_from_fit, ipw_from_fit, mie_ri_from_fit, UnconfoundedFit,
};
use mie_core::{Dataset, EstimandKind, EstimateReport, FamilyKind, InterventionFamily, Regime, WeightScheme};

use crate::config::{DgpRef, DgpSection, EstimateSection, EstimatorKind, OracleSection, RegimeChoice, RunConfig};
use crate::csvio::{load_csv, write_csv};
use crate::error::{CliError, Context, Result};
use crate::report::{DataSummary, MachineReport, OracleRecord, Record, ResultTable};
use crate::rhc::{self, RhcPreset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate,
    Oracle,
    ReplicateRhc,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Oracle => "oracle",
            Command::ReplicateRhc => "replicate-rhc",
        }
    }
}

/// Draws the configured synthetic dataset.
pub fn simulate(dgp: &DgpSection, seed: u64) -> Result<Dataset> {
    match dgp.model()? {
        DgpRef::Unconfounded(d) => generate_unconfounded(d, dgp.n, seed),
        DgpRef::Roy(d) => generate_roy(d, dgp.n, seed),
    }
    .context(|| "simulate".into())
}

/// Writes a simulated CSV and returns a one-line summary.
pub fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let dgp = cfg.dgp.as_ref().ok_or_else(|| CliError::Config("simulate needs a [dgp] section".into()))?;
    if cfg.data.is_some() {
        return Err(CliError::Config("simulate takes [dgp], not [data]".into()));
    }
    let data = simulate(dgp, cfg.seed)?;
    write_csv(&data, out)?;
    Ok(format!("wrote {} rows ({} treated) to {}", data.n(), data.n_treated(), out.display()))
}

/// Row labels, numbered when a family name repeats.
pub fn row_names(families: &[InterventionFamily]) -> Vec<String> {
    let mut seen = std::collections::BTreeMap::<&str, usize>::new();
    families
        .iter()
        .map(|f| {
            let k = seen.entry(f.name()).or_insert(0);
            *k += 1;
            let total = families.iter().filter(|g| g.name() == f.name()).count();
            if total > 1 {
                format!("{}#{}", f.name(), k)
            } else {
                f.name().to_string()
            }
        })
        .collect()
}

fn ie_column(base: &str, delta: f64) -> String {
    format!("{base} IE({delta})")
}

fn label(kind: EstimandKind, family: &InterventionFamily) -> String {
    format!("{kind} {}", family.name())
}

fn with_fit_diagnostics(fit: &UnconfoundedFit, mut r: EstimateReport) -> EstimateReport {
    r = r
        .diag("clipped_low", fit.clipped_low as f64)
        .diag("clipped_high", fit.clipped_high as f64)
        .diag("propensity_converged", f64::from(u8::from(fit.propensity.converged())));
    if let Some((lo, hi)) = fit.trimming_bounds {
        r = r.diag("trim_low", lo).diag("trim_high", hi);
    }
    r
}

/// What a run computes, independent of the data.
pub struct Plan<'a> {
    pub families: &'a [InterventionFamily],
    pub rows: Vec<String>,
    pub deltas: &'a [f64],
    pub est: &'a EstimateSection,
}

impl<'a> Plan<'a> {
    pub fn new(families: &'a [InterventionFamily], deltas: &'a [f64], est: &'a EstimateSection) -> Self {
        Plan { families, rows: row_names(families), deltas, est }
    }
}

/// Families an estimator cannot handle, with the reason.
fn unsupported(kind: EstimatorKind, family: &InterventionFamily) -> Option<&'static str> {
    let scheme = family.weight_scheme();
    match kind {
        EstimatorKind::Ipw if scheme.is_none() => Some("no matching weighting scheme"),
        EstimatorKind::Aipw if scheme.is_none() || scheme == Some(WeightScheme::Ato) => {
            Some("augmented weighting covers additive, multiplicative and equalizing only")
        }
        EstimatorKind::Robinson if !matches!(family.kind, FamilyKind::Ipsi) => Some("partialing-out targets the IPSI only"),
        EstimatorKind::Dml if scheme.is_none() => Some("no matching weighting scheme"),
        _ => None,
    }
}

/// Runs one estimator for every supported family (and δ), in a fixed order.
pub fn run_estimator(kind: EstimatorKind, data: &Dataset, plan: &Plan) -> Result<Vec<Record>> {
    let ctx = || format!("estimator {}", kind.label());
    let est = plan.est;
    let regime = match kind.regime() {
        RegimeChoice::Unconfounded => Regime::Unconfounded,
        RegimeChoice::Iv => Regime::IvLatentIndex,
    };
    let mie = EstimandKind::mie(regime);
    let mut out = Vec::new();
    let mut push = |row: &str, column: String, report: EstimateReport| {
        out.push(Record { row: row.to_string(), column, report });
    };
    let targets = plan.families.iter().zip(&plan.rows).filter(|(f, _)| unsupported(kind, f).is_none());
    match kind {
        EstimatorKind::Ipw | EstimatorKind::Ri => {
            let fit = fit_unconfounded(data, &est.unconfounded, kind == EstimatorKind::Ri).context(ctx)?;
            let view = if fit.rows.len() == data.n() { None } else { Some(data.select_rows(&fit.rows)) };
            let d = view.as_ref().unwrap_or(data);
            for (fam, row) in targets {
                if kind == EstimatorKind::Ipw {
                    let scheme = fam.weight_scheme().expect("filtered");
                    let (point, max_w) = ipw_from_fit(&fit, d.a(), d.y(), scheme).context(ctx)?;
                    let r = EstimateReport::new(label(mie, fam), "ipw", point, fit.n_used())
                        .diag("max_normalized_weight", max_w)
                        .diag("extreme_weight_warning", f64::from(u8::from(max_w > 0.1)));
                    push(row, kind.label().into(), with_fit_diagnostics(&fit, r));
                } else {
                    let point = mie_ri_from_fit(&fit, fam).context(ctx)?;
                    let r = EstimateReport::new(label(mie, fam), "ri", point, fit.n_used());
                    push(row, kind.label().into(), with_fit_diagnostics(&fit, r));
                    for &delta in plan.deltas {
                        let k = EstimandKind::ie(delta, regime).context(ctx)?;
                        let point = ie_from_fit(&fit, fam, delta).context(ctx)?;
                        let r = EstimateReport::new(label(k, fam), "ri", point, fit.n_used());
                        push(row, ie_column(kind.label(), delta), with_fit_diagnostics(&fit, r));
                    }
                }
            }
        }
        EstimatorKind::Aipw | EstimatorKind::Robinson | EstimatorKind::Dml => {
            for (fam, row) in targets {
                let scheme = fam.weight_scheme();
                let r = if scheme == Some(WeightScheme::Ato) {
                    estimate_robinson(data, &est.unconfounded)
                } else {
                    estimate_aipw(data, scheme.expect("filtered"), &est.unconfounded)
                }
                .context(ctx)?;
                push(row, kind.label().into(), r);
            }
        }
        EstimatorKind::NormalPlugin | EstimatorKind::DrNormal => {
            let model = fit_normal_switching_mle(data, &est.mle).context(ctx)?;
            iv_records(kind, &model, data, plan, &mut push).context(ctx)?;
        }
        EstimatorKind::SemiparametricPlugin | EstimatorKind::DrSemiparametric => {
            let model = fit_semiparametric_liv(data, &est.semiparametric).context(ctx)?;
            iv_records(kind, &model, data, plan, &mut push).context(ctx)?;
        }
    }
    Ok(out)
}

fn iv_records(
    kind: EstimatorKind,
    model: &dyn MteModel,
    data: &Dataset,
    plan: &Plan,
    push: &mut impl FnMut(&str, String, EstimateReport),
) -> mie_core::Result<()> {
    let dr = matches!(kind, EstimatorKind::DrNormal | EstimatorKind::DrSemiparametric);
    let density = if dr {
        let p = fitted_propensities(model, data)?;
        Some(fit_location_shift(data.x(), &p, &plan.est.location_shift)?)
    } else {
        None
    };
    for (fam, row) in plan.families.iter().zip(&plan.rows) {
        match &density {
            Some(d) => push(row, kind.label().into(), estimate_mie_doubly_robust(model, data, fam, d)?),
            None => {
                push(row, kind.label().into(), estimate_mie_plugin(model, data, fam)?);
                for &delta in plan.deltas {
                    push(row, ie_column(kind.label(), delta), estimate_ie_mte(model, data, fam, delta)?);
                }
            }
        }
    }
    Ok(())
}

/// Runs every estimator, attaching bootstrap SEs and intervals where the
/// estimator has no influence-function SE.
pub fn estimate_all(
    data: &Dataset,
    estimators: &[EstimatorKind],
    plan: &Plan,
    boot: Option<&BootstrapPlan>,
) -> Result<Vec<Record>> {
    let mut all = Vec::new();
    for &kind in estimators {
        let mut recs = run_estimator(kind, data, plan)?;
        if let (Some(b), false) = (boot, kind.has_eif_se()) {
            if !recs.is_empty() {
                let points = |d: &Dataset| -> mie_core::Result<Vec<f64>> {
                    run_estimator(kind, d, plan)
                        .map(|r| r.iter().map(|x| x.report.point).collect())
                        .map_err(|e| match e {
                            CliError::Core { source, .. } => source,
                            other => mie_core::Error::Spec(other.to_string()),
                        })
                };
                let outcome =
                    bootstrap_multi(points, data, b).context(|| format!("bootstrap of {}", kind.label()))?;
                for (k, r) in recs.iter_mut().enumerate() {
                    r.report = outcome.apply(k, r.report.clone());
                }
            }
        }
        all.extend(recs);
    }
    Ok(all)
}

fn skip_notes(estimators: &[EstimatorKind], plan: &Plan) -> Vec<String> {
    let mut notes = Vec::new();
    for &kind in estimators {
        for (fam, row) in plan.families.iter().zip(&plan.rows) {
            if let Some(why) = unsupported(kind, fam) {
                notes.push(format!("{} not run for {row}: {why}", kind.label()));
            }
        }
        if !plan.deltas.is_empty() && !kind.supports_ie() {
            notes.push(format!("{} reports the MIE only", kind.label()));
        }
    }
    notes
}

/// Ground truth for one family at the MIE (`delta = None`) or IE(δ).
pub fn oracle_value(
    dgp: &DgpSection,
    family: &InterventionFamily,
    delta: Option<f64>,
    settings: &OracleSection,
    seed: u64,
) -> Result<OracleResult> {
    let ctx = || format!("oracle for {}", family.name());
    match (dgp.model()?, delta) {
        (DgpRef::Unconfounded(d), None) if settings.monte_carlo => {
            oracle_mie_unconfounded_mc(d, family, settings.draws, seed)
        }
        (DgpRef::Unconfounded(d), None) => oracle_mie_unconfounded(d, family),
        (DgpRef::Unconfounded(d), Some(delta)) => oracle_ie_unconfounded(d, family, delta),
        (DgpRef::Roy(d), None) => oracle_mie_iv(d, family),
        (DgpRef::Roy(d), Some(delta)) => oracle_ie_iv(d, family, delta),
    }
    .context(ctx)
}

fn oracle_records(cfg: &RunConfig, dgp: &DgpSection, base: &str) -> Result<Vec<OracleRecord>> {
    let mut out = Vec::new();
    for (fam, row) in cfg.families.iter().zip(row_names(&cfg.families)) {
        let oracle = oracle_value(dgp, fam, None, &cfg.oracle, cfg.seed)?;
        out.push(OracleRecord { row: row.clone(), column: base.into(), oracle });
        for &delta in &cfg.estimate.deltas {
            let oracle = oracle_value(dgp, fam, Some(delta), &cfg.oracle, cfg.seed)?;
            out.push(OracleRecord { row: row.clone(), column: ie_column(base, delta), oracle });
        }
    }
    Ok(out)
}

fn default_title(cmd: Command, cfg: &RunConfig) -> String {
    cfg.output.title.clone().unwrap_or_else(|| match cmd {
        Command::Oracle => "Oracle values".into(),
        _ => "Estimates".into(),
    })
}

fn summary(source: String, data: &Dataset, sha256: Option<String>) -> DataSummary {
    let instruments = crate::csvio::simulated_roles(data).instruments;
    DataSummary {
        source,
        n: data.n(),
        n_treated: data.n_treated(),
        covariates: data.x_names().to_vec(),
        instruments,
        sha256,
    }
}

fn dgp_source(dgp: &DgpSection) -> String {
    match dgp.model() {
        Ok(DgpRef::Roy(_)) => format!("dgp roy n={}", dgp.n),
        _ => format!("dgp unconfounded n={}", dgp.n),
    }
}

fn resolve_estimators(cfg: &RunConfig, data: &Dataset) -> Result<Vec<EstimatorKind>> {
    let regime = cfg
        .estimate
        .regime
        .unwrap_or(if data.z().is_some() { RegimeChoice::Iv } else { RegimeChoice::Unconfounded });
    let estimators = cfg.estimate.estimators.clone().unwrap_or_else(|| EstimatorKind::defaults(regime));
    if estimators.is_empty() {
        return Err(CliError::Config("no estimators selected".into()));
    }
    if let Some(k) = estimators.iter().find(|k| k.regime() != regime) {
        return Err(CliError::Config(format!("estimator {} does not belong to the {regime:?} regime", k.label())));
    }
    if regime == RegimeChoice::Iv && data.z().is_none() {
        return Err(CliError::Config("IV estimators need instrument columns".into()));
    }
    Ok(estimators)
}

pub fn run_estimate(cfg: &RunConfig) -> Result<MachineReport> {
    cfg.validate_source()?;
    cfg.validate_common()?;
    let (data, source) = match (&cfg.data, &cfg.dgp) {
        (Some(roles), _) => {
            let loaded = load_csv(&roles.path, roles)?;
            let sha = rhc::sha256_file(&roles.path)?;
            let s = summary(roles.path.display().to_string(), &loaded.dataset, Some(sha));
            (loaded.dataset, s)
        }
        (None, Some(dgp)) => {
            let data = simulate(dgp, cfg.seed)?;
            let s = summary(dgp_source(dgp), &data, None);
            (data, s)
        }
        (None, None) => unreachable!("validated"),
    };
    let estimators = resolve_estimators(cfg, &data)?;
    let plan = Plan::new(&cfg.families, &cfg.estimate.deltas, &cfg.estimate);
    let boot = cfg.bootstrap().plan(cfg.seed);
    let mut report = MachineReport::new("estimate", default_title(Command::Estimate, cfg), cfg.seed, cfg.output.scale);
    report.records = estimate_all(&data, &estimators, &plan, boot.as_ref())?;
    report.notes = skip_notes(&estimators, &plan);
    if let Some(dgp) = &cfg.dgp {
        report.oracles = oracle_records(cfg, dgp, "Oracle")?;
    }
    report.data = Some(source);
    Ok(report)
}

pub fn run_oracle(cfg: &RunConfig) -> Result<MachineReport> {
    cfg.validate_common()?;
    let dgp = cfg.dgp.as_ref().ok_or_else(|| CliError::Config("oracle needs a [dgp] section".into()))?;
    let mut report = MachineReport::new("oracle", default_title(Command::Oracle, cfg), cfg.seed, cfg.output.scale);
    report.oracles = oracle_records(cfg, dgp, "MIE")?;
    Ok(report)
}

/// Estimates the stylized-family table on the RHC data.
pub fn run_replicate_rhc(cfg: &RunConfig) -> Result<MachineReport> {
    let section = cfg.rhc.clone().unwrap_or_default();
    let preset = match &section.preset {
        Some(p) => RhcPreset::load(p)?,
        None => RhcPreset::builtin(),
    };
    let cache = section.cache_dir.clone().unwrap_or_else(rhc::default_cache_dir);
    let path = match rhc::locate_local(section.path.as_deref(), &cache) {
        Some(p) => p,
        None if section.offline => {
            return Err(CliError::Fetch(format!(
                "RHC data not found; set [rhc] path, the {} variable, or allow downloads",
                rhc::DATA_ENV
            )))
        }
        None => rhc::fetch_rhc(&cache, &preset.preset)?,
    };
    let sha = rhc::sha256_file(&path)?;
    if !preset.preset.sha256.is_empty() && sha != preset.preset.sha256 {
        return Err(CliError::Digest(format!(
            "{} has digest {sha}, preset {} expects {}",
            path.display(),
            preset.preset.version,
            preset.preset.sha256
        )));
    }
    let mut roles = preset.data.clone();
    roles.path = path.clone();
    let loaded = load_csv(&path, &roles)?;
    let data = loaded.dataset;
    if data.n() != preset.preset.expected_rows {
        return Err(CliError::Role(format!(
            "{} has {} rows, preset {} expects {}",
            path.display(),
            data.n(),
            preset.preset.version,
            preset.preset.expected_rows
        )));
    }
    let families = InterventionFamily::stylized().to_vec();
    let estimators = preset.estimate.estimators.clone().unwrap_or_else(|| EstimatorKind::defaults(RegimeChoice::Unconfounded));
    let plan = Plan::new(&families, &[], &preset.estimate);
    let boot = cfg.bootstrap.unwrap_or(preset.bootstrap).plan(cfg.seed);
    let title = preset.output.title.clone().unwrap_or_else(|| "RHC".into());
    let mut report = MachineReport::new("replicate-rhc", title, cfg.seed, preset.output.scale);
    report.records = estimate_all(&data, &estimators, &plan, boot.as_ref())?;
    report.notes = vec![format!("preset {}", preset.preset.version)];
    report.data = Some(summary(format!("rhc ({})", preset.preset.version), &data, Some(sha)));
    Ok(report)
}

/// Runs a report-producing command and builds its table.
pub fn run_report(cmd: Command, cfg: &RunConfig) -> Result<(MachineReport, ResultTable)> {
    let report = match cmd {
        Command::Estimate => run_estimate(cfg)?,
        Command::Oracle => run_oracle(cfg)?,
        Command::ReplicateRhc => run_replicate_rhc(cfg)?,
        Command::Simulate => return Err(CliError::Config("simulate does not produce a report".into())),
    };
    let table = ResultTable::from_report(&report);
    Ok((report, table))
}
