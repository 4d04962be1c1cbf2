//! Estimation of interventional effects (IE) and marginal interventional
//! effects (MIE) for a binary treatment under unconfoundedness or a
//! latent-index instrumental-variable model.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dgp;
pub mod error;
pub mod inference;
pub mod interventions;
pub mod iv;
pub mod learners;
pub mod linalg;
pub mod nuisance;
pub mod optim;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod unconfounded;

pub use data::{Dataset, EstimandKind, EstimateReport, Regime, Violation};
pub use error::{Error, Result};
pub use interventions::{CustomLambda, FamilyKind, InterventionFamily, MtpPolicy, WeightScheme};
