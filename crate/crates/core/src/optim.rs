//! Quasi-Newton minimization and finite-difference checks.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 500, grad_tol: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` given `fg(x) -> (f(x), ∇f(x))` with BFGS and a
/// backtracking Armijo line search.
pub fn bfgs(fg: impl Fn(&DVector<f64>) -> (f64, DVector<f64>), x0: DVector<f64>, opts: BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = fg(&x);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if g.amax() < opts.grad_tol {
            return BfgsResult { x, value: fx, gradient: g, iterations, converged: true };
        }
        iterations += 1;
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + step * &dir;
            let (fn_, gn) = fg(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        let small_change = (fx - fn_).abs() <= 1e-15 * fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if small_change && g.amax() < opts.grad_tol.sqrt() {
            return BfgsResult { x, value: fx, gradient: g, iterations, converged: true };
        }
    }
    let converged = g.amax() < opts.grad_tol;
    BfgsResult { x, value: fx, gradient: g, iterations, converged }
}

/// Largest relative disagreement between an analytic gradient and central
/// differences of `f` with step `h`.
pub fn gradient_check(f: impl Fn(&DVector<f64>) -> f64, grad: &DVector<f64>, x: &DVector<f64>, h: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        let rel = (fd - grad[j]).abs() / grad[j].abs().max(fd.abs()).max(1.0);
        worst = worst.max(rel);
    }
    worst
}

/// Symmetrized central-difference Jacobian of a gradient.
pub fn numerical_hessian(grad: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = h * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (grad(&xp) - grad(&xm)) / (2.0 * step);
        hess.set_column(j, &col);
    }
    0.5 * (&hess + hess.transpose())
}
