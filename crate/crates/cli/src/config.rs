//! Run configuration read from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mie_core::dgp::{RoyDgp, UnconfoundedDgp, DEFAULT_MC_DRAWS};
use mie_core::inference::{BootstrapPlan, CiMethod};
use mie_core::iv::{LocationShiftOptions, MleOptions, SemiparametricOptions};
use mie_core::unconfounded::UnconfoundedOptions;
use mie_core::InterventionFamily;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: Option<DataSection>,
    pub dgp: Option<DgpSection>,
    #[serde(default = "stylized")]
    pub families: Vec<InterventionFamily>,
    #[serde(default)]
    pub estimate: EstimateSection,
    pub bootstrap: Option<BootstrapSection>,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
    pub rhc: Option<RhcSection>,
}

fn stylized() -> Vec<InterventionFamily> {
    InterventionFamily::stylized().to_vec()
}

/// Column roles for a CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub treatment: String,
    /// Cell value coded as treated; numeric 0/1 when absent.
    pub treated_level: Option<String>,
    pub outcome: String,
    /// Cell value coded as 1; numeric when absent.
    pub outcome_level: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Excluded instruments.
    #[serde(default)]
    pub instruments: Vec<String>,
    /// Categorical column -> reference level.
    #[serde(default)]
    pub categorical: BTreeMap<String, String>,
    pub expected_design_columns: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    pub n: usize,
    pub unconfounded: Option<UnconfoundedDgp>,
    pub roy: Option<RoyDgp>,
}

pub enum DgpRef<'a> {
    Unconfounded(&'a UnconfoundedDgp),
    Roy(&'a RoyDgp),
}

impl DgpSection {
    pub fn model(&self) -> Result<DgpRef<'_>> {
        match (&self.unconfounded, &self.roy) {
            (Some(u), None) => Ok(DgpRef::Unconfounded(u)),
            (None, Some(r)) => Ok(DgpRef::Roy(r)),
            _ => Err(CliError::Config("[dgp] needs exactly one of [dgp.unconfounded] or [dgp.roy]".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeChoice {
    Unconfounded,
    Iv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ipw,
    Ri,
    Aipw,
    Robinson,
    /// AIPW for ATE/ATT/ATU, partialing-out for ATO.
    Dml,
    NormalPlugin,
    SemiparametricPlugin,
    DrNormal,
    DrSemiparametric,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Ipw => "IPW",
            EstimatorKind::Ri => "RI",
            EstimatorKind::Aipw => "AIPW",
            EstimatorKind::Robinson => "Robinson",
            EstimatorKind::Dml => "DML",
            EstimatorKind::NormalPlugin => "Normal",
            EstimatorKind::SemiparametricPlugin => "Semiparametric",
            EstimatorKind::DrNormal => "DR-Normal",
            EstimatorKind::DrSemiparametric => "DR-Semiparametric",
        }
    }

    pub fn regime(self) -> RegimeChoice {
        match self {
            EstimatorKind::Ipw | EstimatorKind::Ri | EstimatorKind::Aipw | EstimatorKind::Robinson | EstimatorKind::Dml => {
                RegimeChoice::Unconfounded
            }
            _ => RegimeChoice::Iv,
        }
    }

    /// Standard errors come from the influence function rather than the bootstrap.
    pub fn has_eif_se(self) -> bool {
        matches!(self, EstimatorKind::Aipw | EstimatorKind::Robinson | EstimatorKind::Dml)
    }

    /// Supports IE(δ) in addition to the MIE.
    pub fn supports_ie(self) -> bool {
        matches!(self, EstimatorKind::Ri | EstimatorKind::NormalPlugin | EstimatorKind::SemiparametricPlugin)
    }

    pub fn defaults(regime: RegimeChoice) -> Vec<EstimatorKind> {
        match regime {
            RegimeChoice::Unconfounded => vec![EstimatorKind::Ipw, EstimatorKind::Ri, EstimatorKind::Dml],
            RegimeChoice::Iv => vec![EstimatorKind::NormalPlugin, EstimatorKind::SemiparametricPlugin],
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = CliError;

    /// Accepts the config spelling, e.g. `"dr-semiparametric"`.
    fn from_str(s: &str) -> Result<Self> {
        use serde::de::IntoDeserializer;
        Self::deserialize(s.into_deserializer())
            .map_err(|e: serde::de::value::Error| CliError::Config(format!("estimator: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub regime: Option<RegimeChoice>,
    pub estimators: Option<Vec<EstimatorKind>>,
    /// IE(δ) values reported next to the MIE.
    pub deltas: Vec<f64>,
    pub unconfounded: UnconfoundedOptions,
    pub semiparametric: SemiparametricOptions,
    pub location_shift: LocationShiftOptions,
    pub mle: MleOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    /// 0 disables the bootstrap.
    pub replications: usize,
    pub level: f64,
    pub method: CiMethod,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection { replications: 200, level: 0.95, method: CiMethod::Percentile, seed: None }
    }
}

impl BootstrapSection {
    pub fn plan(&self, run_seed: u64) -> Option<BootstrapPlan> {
        (self.replications > 0).then(|| BootstrapPlan {
            replications: self.replications,
            seed: self.seed.unwrap_or(run_seed),
            level: self.level,
            method: self.method,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Use Monte Carlo even where quadrature applies (unconfounded MIE only).
    pub monte_carlo: bool,
    pub draws: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { monte_carlo: false, draws: DEFAULT_MC_DRAWS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Multiplier applied to printed points and SEs.
    pub scale: f64,
    pub title: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { scale: 1.0, title: None }
    }
}

/// Where `replicate-rhc` finds its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RhcSection {
    pub path: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Replaces the built-in preset.
    pub preset: Option<PathBuf>,
    /// Never download; fail when no local copy exists.
    pub offline: bool,
}

impl RunConfig {
    pub fn bootstrap(&self) -> BootstrapSection {
        self.bootstrap.unwrap_or_default()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().replace('\n', " ")))
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.path);
        }
        if let Some(r) = &mut self.rhc {
            for p in [&mut r.path, &mut r.cache_dir, &mut r.preset].into_iter().flatten() {
                fix(p);
            }
        }
    }

    /// Checks section combinations that serde cannot express.
    pub fn validate_source(&self) -> Result<()> {
        match (&self.data, &self.dgp) {
            (Some(_), Some(_)) => Err(CliError::Config("give either [data] or [dgp], not both".into())),
            (None, None) => Err(CliError::Config("config needs a [data] or [dgp] section".into())),
            (None, Some(d)) => d.model().map(|_| ()),
            (Some(_), None) => Ok(()),
        }
    }

    pub fn validate_common(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(CliError::Config("no intervention families given".into()));
        }
        if let Some(d) = self.estimate.deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(CliError::Config(format!("deltas must be positive, got {d}")));
        }
        if !(self.output.scale.is_finite() && self.output.scale != 0.0) {
            return Err(CliError::Config(format!("output scale {} must be finite and nonzero", self.output.scale)));
        }
        Ok(())
    }
}
