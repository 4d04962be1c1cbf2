//! Regression and smoothing primitives used by every estimator.

pub mod bandwidth;
pub mod kde;
pub mod local_poly;
pub mod logistic;
pub mod ols;

pub use bandwidth::{derivative_rule_of_thumb, silverman};
pub use kde::{kernel_density_derivative, KernelDensityModel};
pub use local_poly::{local_poly_eval, Kernel, LocalPolyEval, LocalPolyFit};
pub use logistic::{
    fit_binary_with_intercept, fit_fractional_logit, fit_logistic_irls, fit_probit, IrlsOptions, Link,
    LogisticModel,
};
pub use ols::{fit_ols, fit_ols_with_intercept, ols_standard_errors, LinearModel};
