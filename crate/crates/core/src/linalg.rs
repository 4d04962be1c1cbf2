//! Dense least squares through Householder QR with column pivoting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Remaining column norm, relative to the original norm, below which a
/// column counts as linearly dependent.
const RANK_TOL: f64 = 1e-10;

/// Householder QR of an `n × p` matrix with column pivoting by largest
/// relative remaining norm (scale invariant).
#[derive(Debug, Clone)]
pub struct PivotedQr {
    qr: DMatrix<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(mut a: DMatrix<f64>) -> Self {
        let (n, p) = a.shape();
        let steps = n.min(p);
        let mut perm: Vec<usize> = (0..p).collect();
        let orig: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
        let mut orig_perm = orig.clone();
        let mut tau = vec![0.0; steps];
        let mut rank = steps;

        for k in 0..steps {
            // pick the column with the largest remaining relative norm
            let mut best = k;
            let mut best_rel = -1.0;
            #[allow(clippy::needless_range_loop)]
            for j in k..p {
                let rem = a.view((k, j), (n - k, 1)).norm();
                let rel = if orig_perm[j] > 0.0 { rem / orig_perm[j] } else { 0.0 };
                if rel > best_rel {
                    best_rel = rel;
                    best = j;
                }
            }
            if best_rel <= RANK_TOL {
                rank = k;
                break;
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
                orig_perm.swap(k, best);
            }
            // Householder reflector for a[k.., k]
            let alpha = a.view((k, k), (n - k, 1)).norm();
            let x0 = a[(k, k)];
            let beta = if x0 >= 0.0 { -alpha } else { alpha };
            let v0 = x0 - beta;
            for i in (k + 1)..n {
                a[(i, k)] /= v0;
            }
            tau[k] = (beta - x0) / beta;
            a[(k, k)] = beta;
            for j in (k + 1)..p {
                let mut s = a[(k, j)];
                for i in (k + 1)..n {
                    s += a[(i, k)] * a[(i, j)];
                }
                s *= tau[k];
                a[(k, j)] -= s;
                for i in (k + 1)..n {
                    let vik = a[(i, k)];
                    a[(i, j)] -= s * vik;
                }
            }
        }
        PivotedQr { qr: a, tau, perm, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Original index of the first column found to be dependent, if any.
    pub fn dependent_column(&self) -> Option<usize> {
        let p = self.qr.ncols();
        if self.rank < p {
            Some(self.perm[self.rank])
        } else {
            None
        }
    }

    /// Least-squares solution of `A x ≈ b`. Errors on rank deficiency.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, p) = self.qr.shape();
        if let Some(column) = self.dependent_column() {
            return Err(Error::RankDeficient { column });
        }
        if b.len() != n {
            return Err(Error::Dimension(format!("response has {} rows, design {}", b.len(), n)));
        }
        let mut y = b.clone();
        // apply Qᵀ
        for k in 0..p {
            let mut s = y[k];
            for i in (k + 1)..n {
                s += self.qr[(i, k)] * y[i];
            }
            s *= self.tau[k];
            y[k] -= s;
            for i in (k + 1)..n {
                y[i] -= s * self.qr[(i, k)];
            }
        }
        // back substitution with R
        let mut z = DVector::zeros(p);
        for k in (0..p).rev() {
            let mut s = y[k];
            for j in (k + 1)..p {
                s -= self.qr[(k, j)] * z[j];
            }
            z[k] = s / self.qr[(k, k)];
        }
        let mut x = DVector::zeros(p);
        for (k, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[k];
        }
        Ok(x)
    }
}

/// Least squares `min ‖A x − b‖²`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() < a.ncols() {
        return Err(Error::RankDeficient { column: a.nrows() });
    }
    PivotedQr::new(a.clone()).solve(b)
}

/// Solve a symmetric positive definite system; on failure retry with a
/// `ridge` added to the diagonal. Returns the solution and whether the
/// ridge was needed.
pub fn solve_spd_with_ridge(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    ridge: f64,
) -> Option<(DVector<f64>, bool)> {
    if let Some(ch) = m.clone().cholesky() {
        return Some((ch.solve(rhs), false));
    }
    let mut r = m.clone();
    for i in 0..r.nrows() {
        r[(i, i)] += ridge;
    }
    r.cholesky().map(|ch| (ch.solve(rhs), true))
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut out = DMatrix::zeros(n, d + 1);
    out.column_mut(0).fill(1.0);
    out.view_mut((0, 1), (n, d)).copy_from(x);
    out
}
