use nalgebra::{DMatrix, DVector};

use super::{
    expit, softplus, validate_weights, weighted_gram, Family, FitResult, MAX_ITER,
    SEPARATION_BOUND, SOLVER_TOL,
};
use crate::error::{Error, Result};
use crate::formula::DesignMatrix;
use crate::linalg::Cholesky;

/// Weighted logistic regression by iteratively reweighted least squares
/// with step-halving. Fractional case weights are allowed (the pseudo-record
/// augmentation depends on them).
pub fn fit_weighted_logistic(
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
    for (i, &y) in response.iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Config(format!(
                "logistic response must be 0 or 1, found {y} at row {i}"
            )));
        }
    }

    let mut theta = DVector::zeros(p);
    let mut deviance = weighted_deviance(x, response, weights, &theta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        let eta = x * &theta;
        let mut irls_w = DVector::zeros(n);
        let mut grad = DVector::zeros(p);
        for i in 0..n {
            let mu = expit(eta[i]);
            irls_w[i] = weights[i] * mu * (1.0 - mu);
            let wr = weights[i] * (response[i] - mu);
            for j in 0..p {
                grad[j] += wr * x[(i, j)];
            }
        }
        let info = weighted_gram(x, &irls_w);
        let chol = Cholesky::new(&info).map_err(|cols| Error::SingularDesign {
            columns: cols.iter().map(|&j| design.column_names[j].clone()).collect(),
        })?;
        let mut delta = chol.solve_vec(&grad);

        // step-halve until the deviance stops increasing
        let mut step = 1.0;
        let mut candidate;
        let mut cand_dev;
        loop {
            candidate = &theta + &delta * step;
            cand_dev = weighted_deviance(x, response, weights, &candidate);
            if cand_dev <= deviance + 1e-10 * (1.0 + deviance.abs()) || step < 1e-8 {
                break;
            }
            step *= 0.5;
        }
        delta *= step;
        theta = candidate;
        deviance = cand_dev;

        let max_rel = (0..p)
            .map(|j| delta[j].abs() / theta[j].abs().max(1.0))
            .fold(0.0f64, f64::max);
        if max_rel < SOLVER_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations,
            last: theta.iter().copied().collect(),
        });
    }

    let eta = x * &theta;
    let mut scores = DMatrix::zeros(n, p);
    let mut irls_w = DVector::zeros(n);
    for i in 0..n {
        let mu = expit(eta[i]);
        irls_w[i] = weights[i] * mu * (1.0 - mu);
        let wr = weights[i] * (response[i] - mu);
        for j in 0..p {
            scores[(i, j)] = wr * x[(i, j)];
        }
    }
    let info = weighted_gram(x, &irls_w);
    let chol = Cholesky::new(&info).map_err(|cols| Error::SingularDesign {
        columns: cols.iter().map(|&j| design.column_names[j].clone()).collect(),
    })?;
    let naive_vcov = chol.inverse();
    let separation = theta.iter().any(|&t| t.abs() > SEPARATION_BOUND);

    Ok(FitResult {
        family: Family::Logistic,
        coefficients: theta,
        naive_vcov,
        scores,
        information: info,
        converged,
        iterations,
        criterion: deviance,
        sigma2: None,
        separation,
        column_names: design.column_names.clone(),
    })
}

fn weighted_deviance(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    theta: &DVector<f64>,
) -> f64 {
    let eta = x * theta;
    let mut dev = 0.0;
    for i in 0..x.nrows() {
        // -log p = softplus(-eta), -log(1-p) = softplus(eta)
        dev += 2.0 * w[i] * (y[i] * softplus(-eta[i]) + (1.0 - y[i]) * softplus(eta[i]));
    }
    dev
}
