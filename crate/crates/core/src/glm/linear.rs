use nalgebra::{DMatrix, DVector};

use super::{validate_weights, weighted_gram, Family, FitResult};
use crate::error::{Error, Result};
use crate::formula::DesignMatrix;
use crate::linalg::Cholesky;

/// Weighted least squares: solves the weighted normal equations and
/// reports per-row score contributions `w_i (y_i - x_i'theta) x_i`.
pub fn fit_weighted_linear(
    design: &DesignMatrix,
    response: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<FitResult> {
    let x = &design.values;
    let n = x.nrows();
    let p = x.ncols();
    if response.len() != n {
        return Err(Error::Config(format!(
            "{} responses for {} design rows",
            response.len(),
            n
        )));
    }
    validate_weights(weights, n)?;

    let info = weighted_gram(x, weights);
    let chol = Cholesky::new(&info).map_err(|cols| Error::SingularDesign {
        columns: cols.iter().map(|&j| design.column_names[j].clone()).collect(),
    })?;
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        let wy = weights[i] * response[i];
        if wy != 0.0 {
            for j in 0..p {
                xtwy[j] += wy * x[(i, j)];
            }
        }
    }
    let theta = chol.solve_vec(&xtwy);

    let mut scores = DMatrix::zeros(n, p);
    let mut sse = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..p).map(|j| x[(i, j)] * theta[j]).sum();
        let r = response[i] - fitted;
        let w = weights[i];
        sse += w * r * r;
        wsum += w;
        for j in 0..p {
            scores[(i, j)] = w * r * x[(i, j)];
        }
    }
    let dof = wsum - p as f64;
    if dof <= 0.0 {
        return Err(Error::Numeric(format!(
            "non-positive residual degrees of freedom ({wsum} total weight, {p} parameters)"
        )));
    }
    let sigma2 = sse / dof;
    let naive_vcov = chol.inverse() * sigma2;

    Ok(FitResult {
        family: Family::Linear,
        coefficients: theta,
        naive_vcov,
        scores,
        information: info,
        converged: true,
        iterations: 1,
        criterion: sse,
        sigma2: Some(sigma2),
        separation: false,
        column_names: design.column_names.clone(),
    })
}
