//! Small dense linear-algebra helpers shared by the fitting routines.
//!
//! The solvers need a Cholesky factorization that, on rank deficiency,
//! reports *which* columns are linearly dependent so errors can name them.
//! nalgebra's `Cholesky` only reports failure, so we carry our own
//! factorization with a relative pivot tolerance.

use nalgebra::{DMatrix, DVector};

/// Relative pivot tolerance: a diagonal pivot below `PIVOT_RTOL * max_diag`
/// marks the column as dependent on the preceding ones.
const PIVOT_RTOL: f64 = 1e-12;

/// Cholesky factorization A = L L' of a symmetric positive definite matrix.
#[derive(Debug)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factorize. On failure returns the indices of the dependent columns.
    pub fn new(a: &DMatrix<f64>) -> Result<Self, Vec<usize>> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
        let tol = PIVOT_RTOL * max_diag.max(1e-300);
        let mut l = DMatrix::zeros(n, n);
        let mut bad = Vec::new();
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > tol) {
                // Zero the row so factorization can continue and flag every
                // dependent column instead of just the first.
                bad.push(j);
                continue;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        if bad.is_empty() {
            Ok(Cholesky { l })
        } else {
            Err(bad)
        }
    }

    /// Solve A x = b.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.l.nrows();
        let mut x = b.clone();
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        // backward: L' x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// A^{-1}, column by column.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve_vec(&e));
        }
        // enforce exact symmetry against rounding in the column solves
        symmetrize(&mut inv);
        inv
    }
}

/// Replace `a` by (a + a') / 2.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Check symmetry and positive semi-definiteness of a covariance matrix.
/// Eigenvalues are allowed to dip to `-rtol * trace`.
pub fn is_symmetric_psd(a: &DMatrix<f64>, rtol: f64) -> bool {
    let n = a.nrows();
    if n != a.ncols() {
        return false;
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for i in 0..n {
        for j in 0..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return false;
            }
        }
    }
    let trace = a.trace();
    let eig = a.clone().symmetric_eigen();
    eig.eigenvalues.iter().all(|&l| l >= -rtol * trace.abs().max(1e-300))
}
