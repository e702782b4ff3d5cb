//! Forward-difference Jacobians.
//!
//! The step for coordinate j is `eps * max(|x_j|, 1)`, and the divisor is
//! the *realized* floating-point difference between the perturbed and the
//! base coordinate, not the nominal step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct JacobianConfig {
    /// Step scale. Default is sqrt of the largest x with 1 - x != 1,
    /// i.e. sqrt(2^-53).
    pub eps: f64,
    /// Use central differences instead of one-sided forward differences.
    pub central: bool,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        JacobianConfig {
            eps: (f64::EPSILON / 2.0).sqrt(),
            central: false,
        }
    }
}

impl JacobianConfig {
    pub fn new(eps: f64) -> Self {
        assert!(eps > 0.0, "eps must be positive");
        JacobianConfig { eps, central: false }
    }
}

/// Finite-difference Jacobian of `f` at `x0`, one column per coordinate.
pub fn jacobian_fd<F>(f: F, x0: &DVector<f64>, config: &JacobianConfig) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let q = x0.len();
    let f0 = if config.central {
        None
    } else {
        Some(f(x0).map_err(|e| column_err(usize::MAX, e))?)
    };
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..q {
        let h = config.eps * x0[j].abs().max(1.0);
        let mut xp = x0.clone();
        xp[j] = x0[j] + h;
        let fp = f(&xp).map_err(|e| column_err(j, e))?;
        let col = if config.central {
            let mut xm = x0.clone();
            xm[j] = x0[j] - h;
            let fm = f(&xm).map_err(|e| column_err(j, e))?;
            (fp - fm) / (xp[j] - xm[j])
        } else {
            let h_actual = xp[j] - x0[j];
            (fp - f0.as_ref().unwrap()) / h_actual
        };
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), q));
        if jac.nrows() != col.len() {
            return Err(Error::Numeric(format!(
                "jacobian: f returned {} components at column {j}, expected {}",
                col.len(),
                jac.nrows()
            )));
        }
        jac.set_column(j, &col);
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

fn column_err(j: usize, e: Error) -> Error {
    if j == usize::MAX {
        Error::Numeric(format!("jacobian: evaluation failed at base point: {e}"))
    } else {
        Error::Numeric(format!("jacobian: evaluation failed at column {j}: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_on_affine_maps() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, -3.0, 0.25]);
        let af = a.clone();
        let f = move |x: &DVector<f64>| Ok(&af * x + DVector::from_element(3, 7.0));
        let x0 = DVector::from_row_slice(&[0.3, -1.7]);
        let jac = jacobian_fd(f, &x0, &JacobianConfig::default()).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_abs_diff_eq!(jac[(i, j)], a[(i, j)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn quadratic_example() {
        // f(x) = (x1^2, x1 x2) at (1, 2) has Jacobian [[2,0],[2,1]]
        let f = |x: &DVector<f64>| {
            Ok(DVector::from_row_slice(&[x[0] * x[0], x[0] * x[1]]))
        };
        let x0 = DVector::from_row_slice(&[1.0, 2.0]);
        let jac = jacobian_fd(f, &x0, &JacobianConfig::default()).unwrap();
        let want = [[2.0, 0.0], [2.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(jac[(i, j)], want[i][j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn logistic_mean_against_analytic_derivative() {
        // f(theta) = expit(theta' x) componentwise over a few x rows;
        // d f_i / d theta_j = mu_i (1 - mu_i) x_ij
        let xs = [
            [1.0, 0.4, -1.2],
            [1.0, -0.9, 0.3],
            [1.0, 2.0, 0.7],
            [1.0, 0.0, 0.0],
        ];
        let theta = DVector::from_row_slice(&[0.3, -0.8, 0.5]);
        let f = move |t: &DVector<f64>| {
            Ok(DVector::from_iterator(
                4,
                xs.iter().map(|x| {
                    let eta: f64 = x.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
                    1.0 / (1.0 + (-eta).exp())
                }),
            ))
        };
        let jac = jacobian_fd(f, &theta, &JacobianConfig::default()).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let eta: f64 = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            for j in 0..3 {
                assert_abs_diff_eq!(jac[(i, j)], mu * (1.0 - mu) * x[j], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn central_differences_available() {
        let f = |x: &DVector<f64>| Ok(DVector::from_row_slice(&[x[0].powi(3)]));
        let x0 = DVector::from_row_slice(&[2.0]);
        let cfg = JacobianConfig {
            eps: 1e-6,
            central: true,
        };
        let jac = jacobian_fd(f, &x0, &cfg).unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 12.0, epsilon = 1e-5);
    }

    #[test]
    fn step_uses_max_abs_one() {
        // at x = 0 the step must be eps * 1, not 0, so the jacobian of the
        // identity is still 1
        let f = |x: &DVector<f64>| Ok(x.clone());
        let x0 = DVector::from_row_slice(&[0.0]);
        let jac = jacobian_fd(f, &x0, &JacobianConfig::default()).unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn failure_carries_column_index() {
        let f = |x: &DVector<f64>| {
            if x[1] > 1.0 {
                Err(Error::Numeric("boom".into()))
            } else {
                Ok(x.clone())
            }
        };
        let x0 = DVector::from_row_slice(&[0.0, 1.0]);
        let err = jacobian_fd(f, &x0, &JacobianConfig::default()).unwrap_err();
        assert!(err.to_string().contains("column 1"), "{err}");
    }
}
