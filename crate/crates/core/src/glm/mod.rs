//! Weighted estimating-equation fits for the model families the pipeline
//! needs: least squares, binomial logit, and multinomial logit.
//!
//! Weights are case weights throughout: they multiply each row's
//! estimating-function contribution, which is exactly the semantics the
//! pseudo-record augmentation relies on. Every fit exposes its per-row
//! score contributions and the observed information so a sandwich variance
//! can be assembled around it.

mod linear;
mod logistic;
mod multinomial;

pub use linear::fit_weighted_linear;
pub use logistic::fit_weighted_logistic;
pub use multinomial::{
    fit_multinomial_logit, multinomial_probs, multinomial_score_contributions,
    predict_multinomial, MultinomFit,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::formula::DesignMatrix;
use crate::linalg::Cholesky;

/// Relative coordinate tolerance for the iterative solvers.
pub const SOLVER_TOL: f64 = 1e-8;
/// Iteration cap for IRLS / Newton.
pub const MAX_ITER: usize = 100;
/// |coefficient| beyond this on the logit scale flags separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Family {
    Linear,
    Logistic,
}

impl Family {
    pub fn fit(
        &self,
        design: &DesignMatrix,
        response: &DVector<f64>,
        weights: &DVector<f64>,
    ) -> Result<FitResult> {
        match self {
            Family::Linear => fit_weighted_linear(design, response, weights),
            Family::Logistic => fit_weighted_logistic(design, response, weights),
        }
    }

    /// Unweighted per-row estimating-function contributions at `theta`:
    /// (y - mu(x'theta)) x, one row per design row.
    pub fn scores_unweighted(
        &self,
        theta: &DVector<f64>,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> DMatrix<f64> {
        let eta = x * theta;
        let mut out = x.clone();
        for i in 0..x.nrows() {
            let mu = match self {
                Family::Linear => eta[i],
                Family::Logistic => expit(eta[i]),
            };
            let resid = y[i] - mu;
            for j in 0..x.ncols() {
                out[(i, j)] *= resid;
            }
        }
        out
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Linear => write!(f, "linear"),
            Family::Logistic => write!(f, "logistic"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "logistic" => Ok(Family::Logistic),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// Result of a weighted fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub family: Family,
    pub coefficients: DVector<f64>,
    /// Model-based covariance of the coefficients: `sigma2 * (X'WX)^-1`
    /// for least squares, `(X'W p(1-p) X)^-1` for the logit.
    pub naive_vcov: DMatrix<f64>,
    /// Per-row weighted score contributions at the solution.
    pub scores: DMatrix<f64>,
    /// Observed information of the raw estimating function, `X'WDX`.
    pub information: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Deviance (logit) or weighted SSE (least squares).
    pub criterion: f64,
    /// Dispersion estimate for the linear family: weighted SSE / (sum w - p).
    pub sigma2: Option<f64>,
    pub separation: bool,
    pub column_names: Vec<String>,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    /// Standard errors from the model-based covariance.
    pub fn naive_se(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), (0..self.p()).map(|j| self.naive_vcov[(j, j)].sqrt()))
    }

    /// `n * (X'WDX)^-1`: the inverse derivative of the (raw-score)
    /// estimating function scaled by the subject count. For a likelihood
    /// family this equals n times the naive covariance; for least squares
    /// the dispersion factor is divided back out so the scale matches the
    /// raw scores.
    pub fn scaled_info_inverse(&self, n_subjects: usize) -> Result<DMatrix<f64>> {
        let ch = Cholesky::new(&self.information).map_err(|cols| Error::SingularDesign {
            columns: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
        })?;
        Ok(ch.inverse() * n_subjects as f64)
    }
}

pub(crate) fn expit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// ln(1 + e^x) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn validate_weights(weights: &DVector<f64>, n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Config(format!(
            "{} weights for {} rows",
            weights.len(),
            n
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Config("weights must be finite and >= 0".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Config("all weights are zero".into()));
    }
    Ok(())
}

pub(crate) fn weighted_gram(
    x: &DMatrix<f64>,
    row_weights: &DVector<f64>,
) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let w = row_weights[i];
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = x[(i, a)] * w;
            for b in a..p {
                g[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}
