use nalgebra::{DMatrix, DVector};

use super::{validate_weights, MAX_ITER, SOLVER_TOL};
use crate::error::{Error, Result};
use crate::formula::DesignMatrix;
use crate::linalg::Cholesky;

/// Multinomial logit fit with level 1 as the reference category.
///
/// `coefficients` holds one row per non-reference level (2..K), each of
/// width q. The flattened parameter vector used everywhere else is row
/// after row: the level-2 block first, then level 3, and so on.
#[derive(Debug, Clone)]
pub struct MultinomFit {
    pub k: usize,
    pub coefficients: DMatrix<f64>,
    /// Covariance of the flattened (K-1)q parameter vector.
    pub vcov: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub column_names: Vec<String>,
}

impl MultinomFit {
    pub fn q(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Level-major flattening of the coefficient matrix.
    pub fn flattened(&self) -> DVector<f64> {
        flatten(&self.coefficients)
    }

    pub fn predict(&self, design: &DMatrix<f64>) -> DMatrix<f64> {
        multinomial_probs(&self.flattened(), self.k, design)
    }
}

fn flatten(coef: &DMatrix<f64>) -> DVector<f64> {
    let (rows, q) = coef.shape();
    DVector::from_iterator(
        rows * q,
        (0..rows).flat_map(|r| (0..q).map(move |c| (r, c))).map(|(r, c)| coef[(r, c)]),
    )
}

/// Class probabilities under a flattened coefficient vector: softmax over
/// (0, gamma_2'x, ..., gamma_K'x), one row per design row, K columns.
pub fn multinomial_probs(gamma_flat: &DVector<f64>, k: usize, design: &DMatrix<f64>) -> DMatrix<f64> {
    let n = design.nrows();
    let q = design.ncols();
    assert_eq!(gamma_flat.len(), (k - 1) * q, "gamma length mismatch");
    let mut probs = DMatrix::zeros(n, k);
    let mut eta = vec![0.0f64; k];
    for i in 0..n {
        eta[0] = 0.0;
        for c in 1..k {
            let mut e = 0.0;
            for j in 0..q {
                e += gamma_flat[(c - 1) * q + j] * design[(i, j)];
            }
            eta[c] = e;
        }
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for c in 0..k {
            let e = (eta[c] - m).exp();
            probs[(i, c)] = e;
            denom += e;
        }
        for c in 0..k {
            probs[(i, c)] /= denom;
        }
    }
    probs
}

/// Newton–Raphson maximum likelihood for the multinomial logit.
///
/// `response` carries level codes 1..=k. Every level must appear among the
/// positively weighted rows.
pub fn fit_multinomial_logit(
    design: &DesignMatrix,
    response: &[i64],
    k: usize,
    weights: &DVector<f64>,
) -> Result<MultinomFit> {
    let x = &design.values;
    let n = x.nrows();
    let q = x.ncols();
    if response.len() != n {
        return Err(Error::Config(format!(
            "{} responses for {} design rows",
            response.len(),
            n
        )));
    }
    if k < 2 {
        return Err(Error::Config("multinomial needs K >= 2 levels".into()));
    }
    validate_weights(weights, n)?;
    for level in 1..=k as i64 {
        let present = response
            .iter()
            .zip(weights.iter())
            .any(|(&y, &w)| y == level && w > 0.0);
        if !present {
            return Err(Error::DegenerateLevel {
                column: "response".into(),
                level,
            });
        }
    }
    if response.iter().any(|&y| y < 1 || y > k as i64) {
        return Err(Error::Config(format!("response levels must lie in 1..={k}")));
    }

    let npar = (k - 1) * q;
    let mut gamma = DVector::zeros(npar);
    let mut deviance = mn_deviance(&gamma, k, x, response, weights);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(npar, npar);

    while iterations < MAX_ITER {
        iterations += 1;
        let probs = multinomial_probs(&gamma, k, x);
        let mut grad = DVector::zeros(npar);
        info.fill(0.0);
        for i in 0..n {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            // gradient blocks: w * (I(y = level) - p_level) * x
            for c in 1..k {
                let level_code = c as i64 + 1;
                let ind = if response[i] == level_code { 1.0 } else { 0.0 };
                let wr = w * (ind - probs[(i, c)]);
                for j in 0..q {
                    grad[(c - 1) * q + j] += wr * x[(i, j)];
                }
            }
            // information blocks: w * p_c (delta_cd - p_d) x x'
            for c in 1..k {
                for d in c..k {
                    let pc = probs[(i, c)];
                    let pd = probs[(i, d)];
                    let v = if c == d { pc * (1.0 - pc) } else { -pc * pd };
                    let wv = w * v;
                    if wv == 0.0 {
                        continue;
                    }
                    for a in 0..q {
                        let xa = wv * x[(i, a)];
                        for b in 0..q {
                            let val = xa * x[(i, b)];
                            info[((c - 1) * q + a, (d - 1) * q + b)] += val;
                        }
                    }
                }
            }
        }
        // mirror the upper block triangle
        for c in 1..k {
            for d in (c + 1)..k {
                for a in 0..q {
                    for b in 0..q {
                        info[((d - 1) * q + b, (c - 1) * q + a)] =
                            info[((c - 1) * q + a, (d - 1) * q + b)];
                    }
                }
            }
        }

        let chol = Cholesky::new(&info).map_err(|cols| Error::SingularDesign {
            columns: cols
                .iter()
                .map(|&j| format!("level{}:{}", j / q + 2, design.column_names[j % q]))
                .collect(),
        })?;
        let mut delta = chol.solve_vec(&grad);

        let mut step = 1.0;
        let mut candidate;
        let mut cand_dev;
        loop {
            candidate = &gamma + &delta * step;
            cand_dev = mn_deviance(&candidate, k, x, response, weights);
            if cand_dev <= deviance + 1e-10 * (1.0 + deviance.abs()) || step < 1e-8 {
                break;
            }
            step *= 0.5;
        }
        delta *= step;
        gamma = candidate;
        deviance = cand_dev;

        let max_rel = (0..npar)
            .map(|j| delta[j].abs() / gamma[j].abs().max(1.0))
            .fold(0.0f64, f64::max);
        if max_rel < SOLVER_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations,
            last: gamma.iter().copied().collect(),
        });
    }

    // refresh the information at the solution for the covariance
    let probs = multinomial_probs(&gamma, k, x);
    info.fill(0.0);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        for c in 1..k {
            for d in c..k {
                let pc = probs[(i, c)];
                let pd = probs[(i, d)];
                let v = if c == d { pc * (1.0 - pc) } else { -pc * pd };
                let wv = w * v;
                for a in 0..q {
                    let xa = wv * x[(i, a)];
                    for b in 0..q {
                        info[((c - 1) * q + a, (d - 1) * q + b)] += xa * x[(i, b)];
                    }
                }
            }
        }
    }
    for c in 1..k {
        for d in (c + 1)..k {
            for a in 0..q {
                for b in 0..q {
                    info[((d - 1) * q + b, (c - 1) * q + a)] =
                        info[((c - 1) * q + a, (d - 1) * q + b)];
                }
            }
        }
    }
    let chol = Cholesky::new(&info).map_err(|cols| Error::SingularDesign {
        columns: cols
            .iter()
            .map(|&j| format!("level{}:{}", j / q + 2, design.column_names[j % q]))
            .collect(),
    })?;
    let vcov = chol.inverse();

    let mut coefficients = DMatrix::zeros(k - 1, q);
    for c in 0..(k - 1) {
        for j in 0..q {
            coefficients[(c, j)] = gamma[c * q + j];
        }
    }

    Ok(MultinomFit {
        k,
        coefficients,
        vcov,
        converged,
        iterations,
        deviance,
        column_names: design.column_names.clone(),
    })
}

fn mn_deviance(
    gamma: &DVector<f64>,
    k: usize,
    x: &DMatrix<f64>,
    response: &[i64],
    weights: &DVector<f64>,
) -> f64 {
    let probs = multinomial_probs(gamma, k, x);
    let mut dev = 0.0;
    for i in 0..x.nrows() {
        let c = (response[i] - 1) as usize;
        dev -= 2.0 * weights[i] * probs[(i, c)].max(1e-300).ln();
    }
    dev
}

/// Class probabilities from a fitted model on new design rows.
pub fn predict_multinomial(fit: &MultinomFit, design: &DMatrix<f64>) -> DMatrix<f64> {
    fit.predict(design)
}

/// Per-row score contributions of the multinomial likelihood at the fit:
/// block k (for level k+1... levels 2..K) is `x * (I(y = level) - p_level)`.
/// Rows with `complete_flag` false contribute zeros (they never entered the
/// first-stage fit).
pub fn multinomial_score_contributions(
    fit: &MultinomFit,
    design: &DMatrix<f64>,
    response: &[i64],
    complete_flag: &[bool],
) -> DMatrix<f64> {
    let n = design.nrows();
    let q = design.ncols();
    let k = fit.k;
    let probs = fit.predict(design);
    let mut out = DMatrix::zeros(n, (k - 1) * q);
    for i in 0..n {
        if !complete_flag[i] {
            continue;
        }
        for c in 1..k {
            let level_code = c as i64 + 1;
            let ind = if response[i] == level_code { 1.0 } else { 0.0 };
            let r = ind - probs[(i, c)];
            for j in 0..q {
                out[(i, (c - 1) * q + j)] = r * design[(i, j)];
            }
        }
    }
    out
}
