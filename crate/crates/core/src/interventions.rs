//! δ-indexed intervention families.
//!
//! Every family maps a baseline propensity `p0` to an interventional
//! propensity `π_δ(p0)`, with the local derivative `λ(p0) = ∂π_δ/∂δ` at
//! `δ = 0` and its slope `λ′(p0)`. The four stylized families, a custom
//! `λ`, and a modified treatment policy (MTP) that marginalizes stay/join
//! probabilities over the natural treatment are supported.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA_MAX: f64 = 5.0;

/// Polynomial in `p0`, lowest order first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }
}

/// Tabulated `λ` with explicitly supplied `λ′`, interpolated linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTable {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub lambda_prime: Option<Vec<f64>>,
}

impl LambdaTable {
    fn check(&self) -> Result<()> {
        let n = self.p.len();
        if n < 2 || self.lambda.len() != n || self.lambda_prime.as_ref().is_some_and(|d| d.len() != n) {
            return Err(Error::Spec("lambda table needs >= 2 rows with matching columns".into()));
        }
        if self.p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spec("lambda table p values must be strictly increasing".into()));
        }
        Ok(())
    }

    fn interp(&self, column: &[f64], p0: f64) -> Result<f64> {
        let n = self.p.len();
        if p0 < self.p[0] || p0 > self.p[n - 1] {
            return Err(Error::Domain(format!(
                "p0 = {p0} outside lambda table range [{}, {}]",
                self.p[0],
                self.p[n - 1]
            )));
        }
        let k = self.p.partition_point(|&v| v <= p0).clamp(1, n - 1);
        let (x0, x1) = (self.p[k - 1], self.p[k]);
        let t = (p0 - x0) / (x1 - x0);
        Ok(column[k - 1] + t * (column[k] - column[k - 1]))
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied `λ` with its derivative.
#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CustomLambda {
    Polynomial { lambda_poly: Polynomial },
    Table { lambda_table: LambdaTable },
    #[serde(skip)]
    Function { lambda: ScalarFn, lambda_prime: Option<ScalarFn> },
}

impl fmt::Debug for CustomLambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CustomLambda::Polynomial { lambda_poly } => write!(f, "Polynomial({:?})", lambda_poly.0),
            CustomLambda::Table { lambda_table } => write!(f, "Table({} rows)", lambda_table.p.len()),
            CustomLambda::Function { lambda_prime, .. } => {
                write!(f, "Function(derivative: {})", lambda_prime.is_some())
            }
        }
    }
}

impl PartialEq for CustomLambda {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (CustomLambda::Polynomial { lambda_poly: a }, CustomLambda::Polynomial { lambda_poly: b }) => a == b,
            (CustomLambda::Table { lambda_table: a }, CustomLambda::Table { lambda_table: b }) => a == b,
            (CustomLambda::Function { lambda: a, .. }, CustomLambda::Function { lambda: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl CustomLambda {
    pub fn function(
        lambda: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lambda_prime: Option<ScalarFn>,
    ) -> Self {
        CustomLambda::Function { lambda: Arc::new(lambda), lambda_prime }
    }

    fn lambda(&self, p0: f64) -> Result<f64> {
        match self {
            CustomLambda::Polynomial { lambda_poly } => Ok(lambda_poly.eval(p0)),
            CustomLambda::Table { lambda_table } => {
                lambda_table.check()?;
                lambda_table.interp(&lambda_table.lambda, p0)
            }
            CustomLambda::Function { lambda, .. } => Ok(lambda(p0)),
        }
    }

    fn lambda_prime(&self, p0: f64) -> Result<f64> {
        match self {
            CustomLambda::Polynomial { lambda_poly } => Ok(lambda_poly.derivative().eval(p0)),
            CustomLambda::Table { lambda_table } => {
                lambda_table.check()?;
                let d = lambda_table
                    .lambda_prime
                    .as_ref()
                    .ok_or_else(|| Error::MissingDerivative("lambda table has no lambda_prime column".into()))?;
                lambda_table.interp(d, p0)
            }
            CustomLambda::Function { lambda_prime, .. } => lambda_prime
                .as_ref()
                .map(|f| f(p0))
                .ok_or_else(|| Error::MissingDerivative("custom lambda supplied without lambda_prime".into())),
        }
    }
}

/// Modified treatment policy with
/// `Pr[A_δ=1 | A=0] = min(1, δ·join(p0))` and
/// `Pr[A_δ=1 | A=1] = max(0, 1 − δ·exit(p0))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MtpPolicy {
    /// Rate at which untreated units are induced into treatment.
    pub join: Polynomial,
    /// Rate at which treated units leave treatment (empty = always stay).
    #[serde(default)]
    pub exit: Polynomial,
}

impl MtpPolicy {
    /// Untreated join with probability δ; treated always stay.
    pub fn uniform_join() -> Self {
        MtpPolicy { join: Polynomial(vec![1.0]), exit: Polynomial::default() }
    }

    /// Untreated join with probability δ·p0.
    pub fn propensity_join() -> Self {
        MtpPolicy { join: Polynomial(vec![0.0, 1.0]), exit: Polynomial::default() }
    }

    pub fn stay(&self, p0: f64, delta: f64) -> f64 {
        (1.0 - delta * self.exit.eval(p0)).clamp(0.0, 1.0)
    }

    pub fn join_probability(&self, p0: f64, delta: f64) -> f64 {
        (delta * self.join.eval(p0)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyKind {
    Additive,
    Multiplicative,
    Equalizing,
    Ipsi,
    Custom(CustomLambda),
    Mtp(MtpPolicy),
}

/// Conventional estimand matched by a stylized family's MIE weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "UPPERCASE")]
pub enum WeightScheme {
    Ate,
    Att,
    Atu,
    Ato,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 4] = [WeightScheme::Ate, WeightScheme::Att, WeightScheme::Atu, WeightScheme::Ato];

    pub fn label(self) -> &'static str {
        match self {
            WeightScheme::Ate => "ATE",
            WeightScheme::Att => "ATT",
            WeightScheme::Atu => "ATU",
            WeightScheme::Ato => "ATO",
        }
    }

    /// MIE weight `λ(p)` implied by the scheme.
    pub fn lambda(self, p: f64) -> f64 {
        match self {
            WeightScheme::Ate => 1.0,
            WeightScheme::Att => p,
            WeightScheme::Atu => 1.0 - p,
            WeightScheme::Ato => p * (1.0 - p),
        }
    }

    pub fn family(self) -> InterventionFamily {
        InterventionFamily::new(match self {
            WeightScheme::Ate => FamilyKind::Additive,
            WeightScheme::Att => FamilyKind::Multiplicative,
            WeightScheme::Atu => FamilyKind::Equalizing,
            WeightScheme::Ato => FamilyKind::Ipsi,
        })
    }
}

/// An intervention family together with the largest admissible δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionFamily {
    #[serde(flatten)]
    pub kind: FamilyKind,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
}

fn default_delta_max() -> f64 {
    DEFAULT_DELTA_MAX
}

impl InterventionFamily {
    pub fn new(kind: FamilyKind) -> Self {
        InterventionFamily { kind, delta_max: DEFAULT_DELTA_MAX }
    }

    pub fn additive() -> Self {
        Self::new(FamilyKind::Additive)
    }
    pub fn multiplicative() -> Self {
        Self::new(FamilyKind::Multiplicative)
    }
    pub fn equalizing() -> Self {
        Self::new(FamilyKind::Equalizing)
    }
    pub fn ipsi() -> Self {
        Self::new(FamilyKind::Ipsi)
    }
    pub fn custom(lambda: CustomLambda) -> Self {
        Self::new(FamilyKind::Custom(lambda))
    }
    pub fn mtp(policy: MtpPolicy) -> Self {
        Self::new(FamilyKind::Mtp(policy))
    }

    /// The four stylized families in table order.
    pub fn stylized() -> [InterventionFamily; 4] {
        [Self::additive(), Self::multiplicative(), Self::equalizing(), Self::ipsi()]
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Additive => "additive",
            FamilyKind::Multiplicative => "multiplicative",
            FamilyKind::Equalizing => "equalizing",
            FamilyKind::Ipsi => "ipsi",
            FamilyKind::Custom(_) => "custom",
            FamilyKind::Mtp(_) => "mtp",
        }
    }

    pub fn weight_scheme(&self) -> Option<WeightScheme> {
        match self.kind {
            FamilyKind::Additive => Some(WeightScheme::Ate),
            FamilyKind::Multiplicative => Some(WeightScheme::Att),
            FamilyKind::Equalizing => Some(WeightScheme::Atu),
            FamilyKind::Ipsi => Some(WeightScheme::Ato),
            _ => None,
        }
    }

    fn check_p0(p0: f64) -> Result<()> {
        if (0.0..=1.0).contains(&p0) {
            Ok(())
        } else {
            Err(Error::Domain(format!("baseline propensity {p0} outside [0, 1]")))
        }
    }

    /// Interventional propensity `π_δ(p0)`.
    pub fn pi_delta(&self, p0: f64, delta: f64) -> Result<f64> {
        Self::check_p0(p0)?;
        if !(delta >= 0.0 && delta <= self.delta_max) {
            return Err(Error::Domain(format!("delta {delta} outside [0, {}]", self.delta_max)));
        }
        let e = delta.exp();
        Ok(match &self.kind {
            FamilyKind::Additive => (p0 + delta).min(1.0),
            FamilyKind::Multiplicative => (p0 * e).min(1.0),
            FamilyKind::Equalizing => (1.0 - (1.0 - p0) / e).min(1.0),
            FamilyKind::Ipsi => {
                if p0 == 0.0 || p0 == 1.0 {
                    p0
                } else {
                    e * p0 / (1.0 - p0 + e * p0)
                }
            }
            FamilyKind::Custom(c) => (p0 + delta * c.lambda(p0)?).clamp(0.0, 1.0),
            FamilyKind::Mtp(m) => p0 * m.stay(p0, delta) + (1.0 - p0) * m.join_probability(p0, delta),
        })
    }

    /// `λ(p0) = ∂π_δ(p0)/∂δ` at `δ = 0` (right limit at cap points).
    pub fn lambda(&self, p0: f64) -> Result<f64> {
        Self::check_p0(p0)?;
        Ok(match &self.kind {
            FamilyKind::Additive => {
                if p0 < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            FamilyKind::Multiplicative => {
                if p0 < 1.0 {
                    p0
                } else {
                    0.0
                }
            }
            FamilyKind::Equalizing => 1.0 - p0,
            FamilyKind::Ipsi => p0 * (1.0 - p0),
            FamilyKind::Custom(c) => c.lambda(p0)?,
            FamilyKind::Mtp(m) => (1.0 - p0) * m.join.eval(p0) - p0 * m.exit.eval(p0),
        })
    }

    /// `λ′(p0)`. Errors at the cap kink of the `min{1, ·}` families.
    pub fn lambda_prime(&self, p0: f64) -> Result<f64> {
        Self::check_p0(p0)?;
        match &self.kind {
            FamilyKind::Additive if p0 == 1.0 => Err(Error::Kink { p0 }),
            FamilyKind::Multiplicative if p0 == 1.0 => Err(Error::Kink { p0 }),
            FamilyKind::Additive => Ok(0.0),
            FamilyKind::Multiplicative => Ok(1.0),
            FamilyKind::Equalizing => Ok(-1.0),
            FamilyKind::Ipsi => Ok(1.0 - 2.0 * p0),
            FamilyKind::Custom(c) => c.lambda_prime(p0),
            FamilyKind::Mtp(m) => {
                let (g, dg) = (m.join.eval(p0), m.join.derivative().eval(p0));
                let (h, dh) = (m.exit.eval(p0), m.exit.derivative().eval(p0));
                Ok(-g + (1.0 - p0) * dg - h - p0 * dh)
            }
        }
    }

    /// Forward difference `(π_h(p0) − p0) / h`.
    pub fn finite_difference_check(&self, p0: f64, h: f64) -> Result<f64> {
        Ok((self.pi_delta(p0, h)? - p0) / h)
    }
}
