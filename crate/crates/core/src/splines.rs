//! B-spline basis evaluation (Cox–de Boor recursion).
//!
//! A basis of order `m` (polynomial degree `m - 1`) with `N` internal knots
//! spans `N + m` functions. Boundary knots are repeated `m` times (open
//! uniform convention) and evaluation points outside the boundary are
//! clamped rather than extrapolated, so predictions on rows whose covariate
//! falls slightly outside the fitting range stay bounded.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    order: usize,
    internal: Vec<f64>,
    boundary: (f64, f64),
    /// Boundary-padded knot vector: `order` copies of lo, the internal
    /// knots, `order` copies of hi.
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(order: usize, internal_knots: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("spline order must be >= 1".into()));
        }
        let (lo, hi) = boundary;
        if !(lo < hi) {
            return Err(Error::Numeric(format!(
                "degenerate spline boundary [{lo}, {hi}]"
            )));
        }
        let mut prev = lo;
        for &k in &internal_knots {
            if !(prev < k && k < hi) {
                return Err(Error::Numeric(format!(
                    "internal knot {k} not strictly inside ({lo}, {hi}) in increasing order"
                )));
            }
            prev = k;
        }
        let mut knots = Vec::with_capacity(internal_knots.len() + 2 * order);
        knots.extend(std::iter::repeat_n(lo, order));
        knots.extend_from_slice(&internal_knots);
        knots.extend(std::iter::repeat_n(hi, order));
        Ok(SplineBasis {
            order,
            internal: internal_knots,
            boundary,
            knots,
        })
    }

    /// Build a basis from observed data: boundary knots at the min and max,
    /// internal knots at equally spaced quantiles (type-7 interpolation).
    pub fn from_data(values: &[f64], n_internal: usize, order: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Numeric("spline basis from empty data".into()));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite spline data"));
        let lo = sorted[0];
        let hi = *sorted.last().unwrap();
        let internal: Vec<f64> = (1..=n_internal)
            .map(|s| quantile_type7(&sorted, s as f64 / (n_internal as f64 + 1.0)))
            .collect();
        SplineBasis::new(order, internal, (lo, hi))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn internal_knots(&self) -> &[f64] {
        &self.internal
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    /// Number of basis functions, N + m.
    pub fn dim(&self) -> usize {
        self.internal.len() + self.order
    }

    /// Evaluate all basis functions at `x` (clamped into the boundary).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        let x = x.clamp(lo, hi);
        let p = self.order - 1;
        let dim = self.dim();
        // knot span: largest i with knots[i] <= x < knots[i+1]; the closing
        // boundary point belongs to the last span
        let mut span = self.order - 1;
        while span + 1 < dim && x >= self.knots[span + 1] {
            span += 1;
        }
        // iterative Cox-de Boor triangle over the p+1 nonzero functions
        let mut n = vec![0.0f64; p + 1];
        let mut left = vec![0.0f64; p + 1];
        let mut right = vec![0.0f64; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0f64; dim];
        out[(span - p)..=span].copy_from_slice(&n);
        out
    }

    /// Evaluate at many points, one row per point.
    pub fn eval_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(xs.len(), dim);
        for (i, &x) in xs.iter().enumerate() {
            let row = self.eval(x);
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Type-7 quantile (linear interpolation of order statistics) of sorted data.
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn degenerate_piecewise_constant() {
        let b = SplineBasis::new(1, vec![], (0.0, 1.0)).unwrap();
        assert_eq!(b.dim(), 1);
        for x in [-0.5, 0.0, 0.3, 1.0, 2.0] {
            assert_eq!(b.eval(x), vec![1.0]);
        }
    }

    #[test]
    fn linear_hat_functions_hand_values() {
        let b = SplineBasis::new(2, vec![0.5], (0.0, 1.0)).unwrap();
        assert_eq!(b.dim(), 3);
        let v = b.eval(0.25);
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cubic_basis_partition_of_unity() {
        // N = 3 internal knots, order 4 => 7 basis functions
        let b = SplineBasis::new(4, vec![0.25, 0.5, 0.75], (0.0, 1.0)).unwrap();
        assert_eq!(b.dim(), 7);
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            let v = b.eval(x);
            let sum: f64 = v.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn from_data_places_quantile_knots() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let b = SplineBasis::from_data(&xs, 3, 4).unwrap();
        assert_eq!(b.dim(), 7);
        assert_eq!(b.boundary(), (0.0, 1.0));
        let m = b.eval_matrix(&xs);
        assert_eq!(m.shape(), (50, 7));
        for i in 0..50 {
            let s: f64 = m.row(i).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_and_clamping() {
        let b = SplineBasis::new(4, vec![0.5], (0.0, 1.0)).unwrap();
        // at boundaries the end basis functions interpolate
        let at_lo = b.eval(0.0);
        let at_hi = b.eval(1.0);
        assert_abs_diff_eq!(at_lo[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at_hi[b.dim() - 1], 1.0, epsilon = 1e-15);
        // clamped outside
        assert_eq!(b.eval(-3.0), at_lo);
        assert_eq!(b.eval(42.0), at_hi);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SplineBasis::new(0, vec![], (0.0, 1.0)).is_err());
        assert!(SplineBasis::new(2, vec![], (1.0, 1.0)).is_err());
        assert!(SplineBasis::new(2, vec![0.0], (0.0, 1.0)).is_err());
        assert!(SplineBasis::new(2, vec![0.6, 0.4], (0.0, 1.0)).is_err());
    }

    proptest! {
        // partition of unity, boundedness, and local support across random
        // knot layouts and orders
        #[test]
        fn basis_invariants(
            order in 1usize..6,
            raw in proptest::collection::vec(0.05f64..0.95, 0..5),
            x in 0.0f64..1.0,
        ) {
            let mut internal = raw;
            internal.sort_by(|a, b| a.partial_cmp(b).unwrap());
            internal.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            let b = SplineBasis::new(order, internal, (0.0, 1.0)).unwrap();
            let v = b.eval(x);
            let sum: f64 = v.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10);
            for &bi in &v {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&bi));
            }
            let nonzero = v.iter().filter(|&&bi| bi != 0.0).count();
            prop_assert!(nonzero <= b.order());
        }
    }
}
