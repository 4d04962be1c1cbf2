//! Gaussian quadrature rules and adaptive Gauss–Legendre integration.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(n: usize, offdiag: impl Fn(usize) -> f64, mass: f64) -> Rule {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = offdiag(k);
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    let mut r = golub_welsch(n, |k| k as f64 / ((4 * k * k - 1) as f64).sqrt(), 2.0);
    // Symmetrize to remove eigen-solver noise.
    for i in 0..n / 2 {
        let (x, w) = (0.5 * (r.nodes[n - 1 - i] - r.nodes[i]), 0.5 * (r.weights[i] + r.weights[n - 1 - i]));
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = w;
        r.weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        r.nodes[n / 2] = 0.0;
    }
    r
}

/// Gauss–Hermite rule for expectations under a standard normal: the
/// weights sum to one and `Σ wᵢ f(xᵢ) ≈ E f(Z)`.
pub fn gauss_hermite_normal(n: usize) -> Rule {
    golub_welsch(n, |k| (k as f64).sqrt(), 1.0)
}

fn gl15() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(15))
}

fn panel(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let r = gl15();
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * r.nodes.iter().zip(&r.weights).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
}

const MAX_DEPTH: usize = 40;

/// `∫ₐᵇ f` by recursive bisection of 15-point Gauss–Legendre panels until
/// the two halves agree with the parent to `tol` (absolute).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = panel(&f, a, b);
    refine(&f, a, b, whole, tol, 0)
}

fn refine(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (l, r) = (panel(f, a, m), panel(f, m, b));
    let err = (l + r - whole).abs();
    if !err.is_finite() {
        return Err(Error::Domain(format!("non-finite integrand on [{a}, {b}]")));
    }
    if err <= tol || depth >= MAX_DEPTH {
        if err > tol {
            return Err(Error::NotConverged { iterations: depth, detail: format!("quadrature on [{a}, {b}]") });
        }
        return Ok(l + r);
    }
    Ok(refine(f, a, m, l, 0.5 * tol, depth + 1)? + refine(f, m, b, r, 0.5 * tol, depth + 1)?)
}
