use thiserror::Error;

use crate::data::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dataset: {}", format_violations(.0))]
    InvalidDataset(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("design matrix is rank deficient: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("complete separation detected after {iterations} iterations")]
    Separation { iterations: usize },

    #[error("optimizer did not converge after {iterations} iterations ({detail})")]
    NotConverged { iterations: usize, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("derivative undefined at kink p0 = {p0}")]
    Kink { p0: f64 },

    #[error("missing derivative: {0}")]
    MissingDerivative(String),

    #[error("local fit at {point} has only {distinct} distinct inputs with positive weight (need {needed})")]
    EffectiveSample {
        point: f64,
        distinct: usize,
        needed: usize,
    },

    #[error("degenerate weights: sum {sum} below threshold {threshold}")]
    DegenerateWeights { sum: f64, threshold: f64 },

    #[error("zero denominator in partialing-out estimator ({0})")]
    ZeroDenominator(f64),

    #[error("propensity trimming left an empty sample (bounds [{low}, {high}])")]
    EmptyTrim { low: f64, high: f64 },

    #[error("integration interval exits the propensity support [{low}, {high}] at rows {rows:?}")]
    Support { low: f64, high: f64, rows: Vec<usize> },

    #[error("propensity support [{low}, {high}] is narrower than {min_width}")]
    NarrowSupport { low: f64, high: f64, min_width: f64 },

    #[error("correlation parameter iterated to the boundary (|rho| = {rho})")]
    RhoBoundary { rho: f64 },

    #[error("degenerate location-shift density: residual sd {sigma} < 1e-8")]
    DegenerateDensity { sigma: f64 },

    #[error("{dropped} of {total} bootstrap replicates failed (limit 5%): {last_error}")]
    ExcessiveDrops {
        dropped: usize,
        total: usize,
        last_error: String,
    },

    #[error("cannot split {n} rows into {k} folds")]
    TooFewRows { n: usize, k: usize },

    #[error("invalid specification: {0}")]
    Spec(String),
}

impl Error {
    /// Short machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidDataset(_) | Error::Dimension(_) => "data",
            Error::RankDeficient { .. }
            | Error::DegenerateLabels(_)
            | Error::Separation { .. }
            | Error::NotConverged { .. }
            | Error::EffectiveSample { .. }
            | Error::RhoBoundary { .. }
            | Error::DegenerateDensity { .. } => "fit",
            Error::Domain(_) | Error::Kink { .. } | Error::MissingDerivative(_) => "domain",
            Error::DegenerateWeights { .. }
            | Error::ZeroDenominator(_)
            | Error::EmptyTrim { .. }
            | Error::Support { .. }
            | Error::NarrowSupport { .. } => "estimate",
            Error::ExcessiveDrops { .. } | Error::TooFewRows { .. } => "inference",
            Error::Spec(_) => "spec",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    let shown: Vec<String> = v.iter().take(5).map(|x| x.to_string()).collect();
    let mut s = shown.join("; ");
    if v.len() > 5 {
        s.push_str(&format!("; and {} more", v.len() - 5));
    }
    s
}
