//! First-stage models for the incomplete variable and the pseudo-complete
//! weighted datasets built from them.
//!
//! Three regimes cover the cases that arise in practice:
//! - *linear-moment*: the incomplete variable enters the estimating
//!   function linearly (possibly through a declared set of moments), so a
//!   single deterministic substitution of conditional moments suffices;
//! - *discrete*: the incomplete variable takes finitely many values, so
//!   each incomplete subject expands into K pseudo-records weighted by the
//!   predicted class probabilities;
//! - *monte-carlo*: the conditional expectation has no closed form, so each
//!   incomplete subject expands into S inverse-CDF draws with weight 1/S.
//!   The underlying uniforms are retained because the variance correction
//!   differentiates straight through them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::formula::{DesignInfo, DesignMatrix, Formula};
use crate::glm::{
    fit_multinomial_logit, fit_weighted_linear, multinomial_probs,
    multinomial_score_contributions,
};
use crate::rng::{discrete_inverse_cdf, inv_norm_cdf, RngStream};
use crate::tabular::{ColumnKind, ObservationTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum GammaKind {
    /// Multinomial logit over a finite level set.
    Multinomial,
    /// Linear conditional mean, fitted by least squares.
    LinearMean,
    /// Linear conditional mean plus a homoscedastic residual variance,
    /// estimated as the average squared residual over the complete cases.
    LinearMeanVariance,
}

impl std::str::FromStr for GammaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(GammaKind::Multinomial),
            "linear-mean" => Ok(GammaKind::LinearMean),
            "linear-mean-variance" => Ok(GammaKind::LinearMeanVariance),
            other => Err(Error::Config(format!("unknown first-stage kind '{other}'"))),
        }
    }
}

/// Fitted first-stage model for the incomplete variable.
///
/// `gamma` is the flattened parameter vector: multinomial fits stack the
/// level-2..K coefficient blocks; the mean+variance kind appends the
/// residual variance as the last entry. `subject_scores` holds per-subject
/// likelihood score contributions (zero rows for incomplete subjects) on
/// the scale matching `vcov`, so the influence rows are `n * vcov * U_i`.
#[derive(Debug, Clone)]
pub struct GammaFit {
    pub kind: GammaKind,
    pub formula: Formula,
    pub design_info: DesignInfo,
    pub gamma: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub subject_scores: DMatrix<f64>,
    pub levels: Option<Vec<i64>>,
    pub converged: bool,
    pub iterations: usize,
    pub n_complete: usize,
}

impl GammaFit {
    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    pub fn k(&self) -> Option<usize> {
        self.levels.as_ref().map(Vec::len)
    }

    /// Width of the mean-model design (excludes the variance entry).
    fn mean_width(&self) -> usize {
        self.design_info.width()
    }

    /// Empirical influence rows for the first-stage estimator, one row per
    /// subject: `omega_i = (n * vcov) U_i`.
    pub fn influence_rows(&self, n_subjects: usize) -> DMatrix<f64> {
        &self.subject_scores * (&self.vcov * n_subjects as f64)
    }

    fn design_for(&self, table: &ObservationTable, rows: &[usize]) -> Result<DMatrix<f64>> {
        self.design_info.build(table, rows, None)
    }

    /// Class probabilities at an arbitrary parameter vector (multinomial).
    pub fn predict_probs_at(
        &self,
        gamma: &DVector<f64>,
        table: &ObservationTable,
        rows: &[usize],
    ) -> Result<DMatrix<f64>> {
        let k = self
            .k()
            .ok_or_else(|| Error::State("class probabilities need a multinomial fit".into()))?;
        let w = self.design_for(table, rows)?;
        let probs = multinomial_probs(gamma, k, &w);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite predicted class probability".into()));
        }
        Ok(probs)
    }

    /// Conditional mean at an arbitrary parameter vector (linear kinds).
    pub fn predict_mean_at(
        &self,
        gamma: &DVector<f64>,
        table: &ObservationTable,
        rows: &[usize],
    ) -> Result<DVector<f64>> {
        if self.kind == GammaKind::Multinomial {
            return Err(Error::State("conditional mean needs a linear kind".into()));
        }
        let w = self.design_for(table, rows)?;
        let p = self.mean_width();
        let beta = DVector::from_iterator(p, (0..p).map(|j| gamma[j]));
        Ok(&w * beta)
    }

    /// Residual variance entry of the parameter vector, when present.
    pub fn eta2_of(&self, gamma: &DVector<f64>) -> Result<f64> {
        if self.kind != GammaKind::LinearMeanVariance {
            return Err(Error::Config(
                "the first-stage kind carries no residual variance".into(),
            ));
        }
        let eta2 = gamma[self.mean_width()];
        if !(eta2 > 0.0) {
            return Err(Error::Numeric(format!("non-positive residual variance {eta2}")));
        }
        Ok(eta2)
    }

    /// Inverse conditional CDF at frozen uniforms, evaluated at an
    /// arbitrary parameter vector. Gaussian for the mean+variance kind,
    /// cumulative-probability inversion for the multinomial kind.
    pub fn inverse_cdf_at(
        &self,
        gamma: &DVector<f64>,
        table: &ObservationTable,
        rows: &[usize],
        uniforms: &[f64],
    ) -> Result<Vec<f64>> {
        assert_eq!(rows.len(), uniforms.len());
        match self.kind {
            GammaKind::LinearMeanVariance => {
                let mean = self.predict_mean_at(gamma, table, rows)?;
                let sd = self.eta2_of(gamma)?.sqrt();
                Ok(uniforms
                    .iter()
                    .zip(mean.iter())
                    .map(|(&u, &m)| m + sd * inv_norm_cdf(u))
                    .collect())
            }
            GammaKind::Multinomial => {
                let probs = self.predict_probs_at(gamma, table, rows)?;
                let levels = self.levels.as_ref().unwrap();
                Ok(uniforms
                    .iter()
                    .enumerate()
                    .map(|(i, &u)| {
                        let row: Vec<f64> = (0..probs.ncols()).map(|c| probs[(i, c)]).collect();
                        levels[discrete_inverse_cdf(&row, u)] as f64
                    })
                    .collect())
            }
            GammaKind::LinearMean => Err(Error::Config(
                "monte-carlo draws need a full conditional distribution; \
                 the mean-only kind has none (use linear-mean-variance)"
                    .into(),
            )),
        }
    }
}

/// Fit the first-stage model for the incomplete variable on the complete
/// cases. With no incomplete column the fit runs over every row and the
/// downstream augmentation is a no-op.
pub fn fit_gamma(table: &ObservationTable, formula: &Formula, kind: GammaKind) -> Result<GammaFit> {
    let rows = table.complete_rows();
    if rows.is_empty() {
        return Err(Error::Schema("no complete cases to fit the first-stage model".into()));
    }
    let info = DesignInfo::new(formula, table, &rows)?;
    let values = info.build(table, &rows, None)?;
    let design = DesignMatrix {
        values,
        column_names: info.column_names.clone(),
    };
    let n = table.n_rows();
    let n_complete = rows.len();
    let ones = DVector::from_element(n_complete, 1.0);

    match kind {
        GammaKind::Multinomial => {
            let col = table.column(&formula.response)?;
            let levels = match &col.kind {
                ColumnKind::Categorical { levels } => {
                    let mut l = levels.clone();
                    l.sort_unstable();
                    l
                }
                ColumnKind::Numeric => {
                    return Err(Error::Config(format!(
                        "multinomial first stage needs a categorical column, '{}' is numeric",
                        formula.response
                    )))
                }
            };
            let codes: Vec<i64> = rows.iter().map(|&r| col.values[r] as i64).collect();
            let fit = fit_multinomial_logit(&design, &codes, levels.len(), &ones)?;
            let flags = vec![true; n_complete];
            let complete_scores =
                multinomial_score_contributions(&fit, &design.values, &codes, &flags);
            let q = fit.vcov.nrows();
            let mut subject_scores = DMatrix::zeros(n, q);
            for (i, &r) in rows.iter().enumerate() {
                for j in 0..q {
                    subject_scores[(r, j)] = complete_scores[(i, j)];
                }
            }
            Ok(GammaFit {
                kind,
                formula: formula.clone(),
                design_info: info,
                gamma: fit.flattened(),
                vcov: fit.vcov.clone(),
                subject_scores,
                levels: Some(levels),
                converged: fit.converged,
                iterations: fit.iterations,
                n_complete,
            })
        }
        GammaKind::LinearMean | GammaKind::LinearMeanVariance => {
            let y = info.response_vector(table, &rows, None)?;
            let fit = fit_weighted_linear(&design, &y, &ones)?;
            let p = fit.coefficients.len();
            let resid: Vec<f64> = rows
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let fitted: f64 =
                        (0..p).map(|j| design.values[(i, j)] * fit.coefficients[j]).sum();
                    y[i] - fitted
                })
                .collect();
            if kind == GammaKind::LinearMean {
                let sigma2 = fit.sigma2.unwrap();
                let mut subject_scores = DMatrix::zeros(n, p);
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..p {
                        subject_scores[(r, j)] = resid[i] * design.values[(i, j)] / sigma2;
                    }
                }
                Ok(GammaFit {
                    kind,
                    formula: formula.clone(),
                    design_info: info,
                    gamma: fit.coefficients.clone(),
                    vcov: fit.naive_vcov.clone(),
                    subject_scores,
                    levels: None,
                    converged: true,
                    iterations: 1,
                    n_complete,
                })
            } else {
                // append the average squared residual as the variance entry
                let eta2 = resid.iter().map(|r| r * r).sum::<f64>() / n_complete as f64;
                if !(eta2 > 0.0) {
                    return Err(Error::Numeric("zero residual variance in first stage".into()));
                }
                let mut gamma = DVector::zeros(p + 1);
                for j in 0..p {
                    gamma[j] = fit.coefficients[j];
                }
                gamma[p] = eta2;
                // Gaussian-likelihood observed information is block diagonal
                // at the fit (the beta/eta2 cross terms vanish because the
                // residuals are orthogonal to the design), giving
                // vcov = diag(eta2 (W'W)^-1, 2 eta2^2 / n_complete)
                let mut vcov = DMatrix::zeros(p + 1, p + 1);
                let beta_block = &fit.naive_vcov * (eta2 / fit.sigma2.unwrap());
                for a in 0..p {
                    for b in 0..p {
                        vcov[(a, b)] = beta_block[(a, b)];
                    }
                }
                vcov[(p, p)] = 2.0 * eta2 * eta2 / n_complete as f64;
                let mut subject_scores = DMatrix::zeros(n, p + 1);
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..p {
                        subject_scores[(r, j)] = resid[i] * design.values[(i, j)] / eta2;
                    }
                    subject_scores[(r, p)] =
                        (resid[i] * resid[i] - eta2) / (2.0 * eta2 * eta2);
                }
                Ok(GammaFit {
                    kind,
                    formula: formula.clone(),
                    design_info: info,
                    gamma,
                    vcov,
                    subject_scores,
                    levels: None,
                    converged: true,
                    iterations: 1,
                    n_complete,
                })
            }
        }
    }
}

/// Which conditional moments a linear-moment augmentation must substitute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentPlan {
    MeanOnly,
    /// Also fill the table's square-companion column with the conditional
    /// second moment `mean^2 + eta2` (not the square of the imputed mean).
    MeanAndSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Provenance {
    LinearMoment,
    Discrete,
    MonteCarlo,
}

/// Pseudo-record expansion of an observation table, carrying case weights,
/// source-row bookkeeping, and (for the monte-carlo regime) the retained
/// uniforms behind each draw.
#[derive(Debug, Clone)]
pub struct AugmentedTable {
    pub table: ObservationTable,
    pub weights: DVector<f64>,
    pub source_row: Vec<usize>,
    pub r_flags: Vec<bool>,
    pub provenance: Provenance,
    pub s: Option<usize>,
    pub uniforms: Vec<Option<f64>>,
    pub n_subjects: usize,
    /// Name of the square-companion column the expansion filled, if any
    /// (the materialized table itself no longer tracks missingness).
    pub square_companion: Option<String>,
}

impl AugmentedTable {
    pub fn n_rows(&self) -> usize {
        self.source_row.len()
    }

    /// Sum of pseudo-record weights per source subject (index-aligned with
    /// the original table's rows).
    pub fn subject_weight_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_subjects];
        for (i, &r) in self.source_row.iter().enumerate() {
            sums[r] += self.weights[i];
        }
        sums
    }

    pub fn incomplete_pseudo_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| !self.r_flags[i]).collect()
    }
}

struct PseudoEntry {
    source_row: usize,
    weight: f64,
    value: Option<f64>,
    value_sq: Option<f64>,
    uniform: Option<f64>,
}

fn materialize(
    table: &ObservationTable,
    entries: Vec<PseudoEntry>,
    provenance: Provenance,
    s: Option<usize>,
) -> Result<AugmentedTable> {
    let rows: Vec<usize> = entries.iter().map(|e| e.source_row).collect();
    let mut out = table.gather(&rows, false);
    if let Some(inc) = table.incomplete_column() {
        let orig = table.column(inc)?;
        let values: Vec<f64> = entries
            .iter()
            .map(|e| e.value.unwrap_or_else(|| orig.values[e.source_row]))
            .collect();
        out.fill_column(inc, values)?;
        if let Some(sq) = table.square_companion() {
            let orig_sq = table.column(sq)?;
            let values: Vec<f64> = entries
                .iter()
                .map(|e| e.value_sq.unwrap_or_else(|| orig_sq.values[e.source_row]))
                .collect();
            out.fill_column(sq, values)?;
        }
    }
    out.mark_complete();
    let complete = table.complete_mask();
    Ok(AugmentedTable {
        table: out,
        weights: DVector::from_iterator(entries.len(), entries.iter().map(|e| e.weight)),
        r_flags: entries.iter().map(|e| complete[e.source_row]).collect(),
        uniforms: entries.iter().map(|e| e.uniform).collect(),
        source_row: rows,
        provenance,
        s,
        n_subjects: table.n_rows(),
        square_companion: table.square_companion().map(str::to_string),
    })
}

/// Single deterministic substitution of conditional moments for an
/// incomplete variable that enters the estimating function linearly.
pub fn augment_linear_moment(
    table: &ObservationTable,
    gamma: &GammaFit,
    plan: MomentPlan,
) -> Result<AugmentedTable> {
    if gamma.kind == GammaKind::Multinomial {
        return Err(Error::Config(
            "linear-moment augmentation needs a linear first-stage kind".into(),
        ));
    }
    match plan {
        MomentPlan::MeanAndSquare => {
            if gamma.kind != GammaKind::LinearMeanVariance {
                return Err(Error::Config(
                    "second-moment substitution needs the mean+variance first stage".into(),
                ));
            }
            if table.square_companion().is_none() {
                return Err(Error::Config(
                    "second-moment substitution needs a square-companion column".into(),
                ));
            }
        }
        MomentPlan::MeanOnly => {
            if table.square_companion().is_some() {
                return Err(Error::Config(
                    "table declares a square companion; use the mean-and-square plan".into(),
                ));
            }
        }
    }
    let incomplete = table.incomplete_rows();
    let means = gamma.predict_mean_at(&gamma.gamma, table, &incomplete)?;
    let eta2 = if plan == MomentPlan::MeanAndSquare {
        Some(gamma.eta2_of(&gamma.gamma)?)
    } else {
        None
    };
    let mut next_incomplete = 0usize;
    let complete = table.complete_mask();
    let entries = (0..table.n_rows())
        .map(|r| {
            if complete[r] {
                PseudoEntry {
                    source_row: r,
                    weight: 1.0,
                    value: None,
                    value_sq: None,
                    uniform: None,
                }
            } else {
                let m = means[next_incomplete];
                next_incomplete += 1;
                PseudoEntry {
                    source_row: r,
                    weight: 1.0,
                    value: Some(m),
                    value_sq: eta2.map(|e| m * m + e),
                    uniform: None,
                }
            }
        })
        .collect();
    materialize(table, entries, Provenance::LinearMoment, None)
}

/// K-pseudo-record expansion for a discrete incomplete variable: each
/// incomplete subject contributes one row per level, weighted by the
/// predicted class probability; complete subjects keep weight 1.
pub fn augment_discrete(table: &ObservationTable, gamma: &GammaFit) -> Result<AugmentedTable> {
    let levels = gamma
        .levels
        .clone()
        .ok_or_else(|| Error::Config("discrete augmentation needs a multinomial first stage".into()))?;
    if table.square_companion().is_some() {
        return Err(Error::Config(
            "square companions do not apply to a discrete incomplete variable".into(),
        ));
    }
    let incomplete = table.incomplete_rows();
    let probs = gamma.predict_probs_at(&gamma.gamma, table, &incomplete)?;
    let complete = table.complete_mask();
    let mut entries = Vec::with_capacity(table.n_rows() + incomplete.len() * (levels.len() - 1));
    let mut mi = 0usize;
    for r in 0..table.n_rows() {
        if complete[r] {
            entries.push(PseudoEntry {
                source_row: r,
                weight: 1.0,
                value: None,
                value_sq: None,
                uniform: None,
            });
        } else {
            for (k, &level) in levels.iter().enumerate() {
                entries.push(PseudoEntry {
                    source_row: r,
                    weight: probs[(mi, k)],
                    value: Some(level as f64),
                    value_sq: None,
                    uniform: None,
                });
            }
            mi += 1;
        }
    }
    materialize(table, entries, Provenance::Discrete, None)
}

/// S-draw stacking for conditionals without a closed-form expectation.
/// Refuses a discrete conditional (the exact expansion is both cheaper and
/// free of simulation noise); use [`augment_monte_carlo_forced`] to bypass.
pub fn augment_monte_carlo(
    table: &ObservationTable,
    gamma: &GammaFit,
    s: usize,
    rng: &mut RngStream,
) -> Result<AugmentedTable> {
    if gamma.kind == GammaKind::Multinomial {
        return Err(Error::Config(
            "the incomplete variable is discrete: the exact K-record expansion applies; \
             force monte-carlo only if you really want simulation noise"
                .into(),
        ));
    }
    augment_monte_carlo_forced(table, gamma, s, rng)
}

/// Monte-carlo stacking without the discrete-conditional guard.
pub fn augment_monte_carlo_forced(
    table: &ObservationTable,
    gamma: &GammaFit,
    s: usize,
    rng: &mut RngStream,
) -> Result<AugmentedTable> {
    if s < 1 {
        return Err(Error::Config("the imputation count S must be >= 1".into()));
    }
    let complete = table.complete_mask();
    let incomplete = table.incomplete_rows();
    // one uniform per (subject, j), drawn in row-major order and retained
    let uniforms: Vec<Vec<f64>> = incomplete
        .iter()
        .map(|_| (0..s).map(|_| rng.uniform()).collect())
        .collect();
    let mut flat_rows = Vec::with_capacity(incomplete.len() * s);
    let mut flat_us = Vec::with_capacity(incomplete.len() * s);
    for (i, &r) in incomplete.iter().enumerate() {
        for j in 0..s {
            flat_rows.push(r);
            flat_us.push(uniforms[i][j]);
        }
    }
    let draws = gamma.inverse_cdf_at(&gamma.gamma, table, &flat_rows, &flat_us)?;

    let has_square = table.square_companion().is_some();
    let mut entries = Vec::with_capacity(table.n_rows() + incomplete.len() * (s - 1));
    let mut di = 0usize;
    for r in 0..table.n_rows() {
        if complete[r] {
            entries.push(PseudoEntry {
                source_row: r,
                weight: 1.0,
                value: None,
                value_sq: None,
                uniform: None,
            });
        } else {
            for _ in 0..s {
                let v = draws[di];
                entries.push(PseudoEntry {
                    source_row: r,
                    weight: 1.0 / s as f64,
                    value: Some(v),
                    value_sq: has_square.then_some(v * v),
                    uniform: Some(flat_us[di]),
                });
                di += 1;
            }
        }
    }
    materialize(table, entries, Provenance::MonteCarlo, Some(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::tabular::{ColumnRole, TableBuilder};
    use approx::assert_abs_diff_eq;

    fn linear_table(mask: Vec<bool>) -> ObservationTable {
        // y incomplete, covariates z and auxiliary a fully observed
        let n = mask.len();
        let mut rng = RngStream::new(100);
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.uniform() * 5.0).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 2.0 * z[i] - 0.5 * a[i] + 0.3 * rng.normal())
            .collect();
        TableBuilder::new()
            .numeric("y", ColumnRole::Response, y)
            .numeric("z", ColumnRole::Covariate, z)
            .numeric("a", ColumnRole::Auxiliary, a)
            .incomplete("y", mask)
            .build()
            .unwrap()
    }

    #[test]
    fn gamma_ols_matches_complete_case_least_squares() {
        let mask: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let t = linear_table(mask);
        let f = parse_formula("y ~ z + a").unwrap();
        let g = fit_gamma(&t, &f, GammaKind::LinearMean).unwrap();
        assert_eq!(g.q(), 3);
        // direct least squares on the complete rows
        let rows = t.complete_rows();
        let info = DesignInfo::new(&f, &t, &rows).unwrap();
        let design = DesignMatrix {
            values: info.build(&t, &rows, None).unwrap(),
            column_names: info.column_names.clone(),
        };
        let y = info.response_vector(&t, &rows, None).unwrap();
        let ones = DVector::from_element(rows.len(), 1.0);
        let direct = fit_weighted_linear(&design, &y, &ones).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(g.gamma[j], direct.coefficients[j], epsilon = 1e-12);
        }
        // subject scores vanish on incomplete rows and sum to zero
        for r in t.incomplete_rows() {
            assert!(g.subject_scores.row(r).iter().all(|&v| v == 0.0));
        }
        for j in 0..3 {
            let s: f64 = g.subject_scores.column(j).iter().sum();
            assert!(s.abs() < 1e-8, "column {j}: {s}");
        }
    }

    #[test]
    fn linear_moment_substitutes_conditional_mean() {
        let mask: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let t = linear_table(mask);
        let f = parse_formula("y ~ z + a").unwrap();
        let g = fit_gamma(&t, &f, GammaKind::LinearMean).unwrap();
        let aug = augment_linear_moment(&t, &g, MomentPlan::MeanOnly).unwrap();
        assert_eq!(aug.n_rows(), 30);
        assert!(aug.weights.iter().all(|&w| w == 1.0));
        let y = aug.table.column("y").unwrap();
        let z = t.column("z").unwrap();
        let a = t.column("a").unwrap();
        for r in t.incomplete_rows() {
            let want = g.gamma[0] + g.gamma[1] * z.values[r] + g.gamma[2] * a.values[r];
            assert_abs_diff_eq!(y.values[r], want, epsilon = 1e-12);
        }
        for r in t.complete_rows() {
            assert_eq!(y.values[r].to_bits(), t.column("y").unwrap().values[r].to_bits());
        }
    }

    #[test]
    fn second_moment_uses_variance_not_squared_mean() {
        // missing covariate z with a squared companion z2
        let n = 25;
        let mut rng = RngStream::new(4);
        let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let z: Vec<f64> = (0..n).map(|i| 0.5 + 0.8 * a[i] + 0.4 * rng.normal()).collect();
        let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + z[i] - 0.2 * z2[i] + rng.normal()).collect();
        let mask: Vec<bool> = (0..n).map(|i| i % 5 == 0).collect();
        let t = TableBuilder::new()
            .numeric("y", ColumnRole::Response, y)
            .numeric("z", ColumnRole::Covariate, z)
            .numeric("z2", ColumnRole::Covariate, z2)
            .numeric("a", ColumnRole::Auxiliary, a)
            .incomplete("z", mask)
            .square_companion("z2")
            .build()
            .unwrap();
        let f = parse_formula("z ~ a + y").unwrap();
        let g = fit_gamma(&t, &f, GammaKind::LinearMeanVariance).unwrap();
        let eta2 = g.eta2_of(&g.gamma).unwrap();
        assert!(eta2 > 0.0);
        let aug = augment_linear_moment(&t, &g, MomentPlan::MeanAndSquare).unwrap();
        let zc = aug.table.column("z").unwrap();
        let z2c = aug.table.column("z2").unwrap();
        for r in t.incomplete_rows() {
            assert_abs_diff_eq!(z2c.values[r], zc.values[r] * zc.values[r] + eta2, epsilon = 1e-12);
        }
        // requesting the square without the variance kind is a config error
        let gm = fit_gamma(&t, &f, GammaKind::LinearMean).unwrap();
        assert!(matches!(
            augment_linear_moment(&t, &gm, MomentPlan::MeanAndSquare),
            Err(Error::Config(_))
        ));
    }

    fn discrete_table(n: usize, m: usize, seed: u64) -> ObservationTable {
        let mut rng = RngStream::new(seed);
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
        // cycle the levels so every level appears among the complete rows
        let levels: Vec<f64> = (0..n).map(|i| (i % 3) as f64 + 1.0).collect();
        let mask: Vec<bool> = (0..n).map(|i| i < m).collect();
        TableBuilder::new()
            .numeric("y", ColumnRole::Response, y)
            .numeric("z", ColumnRole::Covariate, z)
            .categorical("x", ColumnRole::Covariate, vec![1, 2, 3], levels)
            .incomplete("x", mask)
            .build()
            .unwrap()
    }

    #[test]
    fn discrete_layout_weights_and_counts() {
        // 6 complete rows only support an intercept-only first stage
        let t = discrete_table(10, 4, 9);
        let f = parse_formula("x ~ 1").unwrap();
        let g = fit_gamma(&t, &f, GammaKind::Multinomial).unwrap();
        assert_eq!(g.gamma.len(), 2);
        let aug = augment_discrete(&t, &g).unwrap();
        // n - m singles plus m * K pseudo-records
        assert_eq!(aug.n_rows(), 6 + 12);
        // weights equal the predicted probabilities exactly
        let incomplete = t.incomplete_rows();
        let probs = g.predict_probs_at(&g.gamma, &t, &incomplete).unwrap();
        let mut idx = 0;
        for (mi, &r) in incomplete.iter().enumerate() {
            for k in 0..3 {
                let pos = aug
                    .source_row
                    .iter()
                    .enumerate()
                    .filter(|(_, &sr)| sr == r)
                    .map(|(i, _)| i)
                    .nth(k)
                    .unwrap();
                assert_eq!(aug.weights[pos], probs[(mi, k)]);
                idx += 1;
            }
        }
        assert_eq!(idx, 12);
        for (r, s) in aug.subject_weight_sums().iter().enumerate() {
            assert!((*s - 1.0).abs() < 1e-12, "subject {r}: {s}");
        }
        // subject multiset preserved
        let mut sources = aug.source_row.clone();
        sources.dedup();
        assert_eq!(sources, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn all_complete_is_identity() {
        let t = discrete_table(8, 0, 2);
        let f = parse_formula("x ~ z + y").unwrap();
        let g = fit_gamma(&t, &f, GammaKind::Multinomial).unwrap();
        let aug = augment_discrete(&t, &g).unwrap();
        assert_eq!(aug.n_rows(), 8);
        assert!(aug.weights.iter().all(|&w| w == 1.0));
        let orig = t.column("x").unwrap();
        let new = aug.table.column("x").unwrap();
        for r in 0..8 {
            assert_eq!(orig.values[r].to_bits(), new.values[r].to_bits());
        }
    }

    #[test]
    fn monte_carlo_row_count_and_weights() {
        let mask: Vec<bool> = (0..100).map(|i| i < 40).collect();
        let t = linear_table(mask);
        let f = parse_formula("y ~ z + a").unwrap();
        let g = fit_gamma(&t, &f, GammaKind::LinearMeanVariance).unwrap();
        let mut rng = RngStream::new(50);
        let aug = augment_monte_carlo(&t, &g, 5, &mut rng).unwrap();
        assert_eq!(aug.n_rows(), 100 + 40 * 4); // n + m(S-1)
        for (r, s) in aug.subject_weight_sums().iter().enumerate() {
            assert!((*s - 1.0).abs() < 1e-12, "subject {r}: {s}");
        }
        // uniforms retained exactly on incomplete pseudo-records
        for i in aug.incomplete_pseudo_rows() {
            assert!(aug.uniforms[i].is_some());
            assert_abs_diff_eq!(aug.weights[i], 0.2, epsilon = 1e-15);
        }
        // bit-reproducible under the same stream
        let mut rng2 = RngStream::new(50);
        let aug2 = augment_monte_carlo(&t, &g, 5, &mut rng2).unwrap();
        let a = aug.table.column("y").unwrap();
        let b = aug2.table.column("y").unwrap();
        for r in 0..aug.n_rows() {
            assert_eq!(a.values[r].to_bits(), b.values[r].to_bits());
        }
    }

    #[test]
    fn monte_carlo_s1_works_and_mean_only_kind_is_rejected() {
        let mask: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let t = linear_table(mask);
        let f = parse_formula("y ~ z + a").unwrap();
        let lmv = fit_gamma(&t, &f, GammaKind::LinearMeanVariance).unwrap();
        let mut rng = RngStream::new(1);
        let aug = augment_monte_carlo(&t, &lmv, 1, &mut rng).unwrap();
        assert_eq!(aug.n_rows(), 20);
        let lm = fit_gamma(&t, &f, GammaKind::LinearMean).unwrap();
        let mut rng = RngStream::new(1);
        assert!(augment_monte_carlo(&t, &lm, 3, &mut rng).is_err());
    }

    #[test]
    fn discrete_conditional_refused_unless_forced() {
        let t = discrete_table(40, 10, 77);
        let f = parse_formula("x ~ z + y").unwrap();
        let g = fit_gamma(&t, &f, GammaKind::Multinomial).unwrap();
        let mut rng = RngStream::new(3);
        assert!(matches!(
            augment_monte_carlo(&t, &g, 4, &mut rng),
            Err(Error::Config(_))
        ));
        let aug = augment_monte_carlo_forced(&t, &g, 4, &mut rng).unwrap();
        assert_eq!(aug.n_rows(), 30 + 10 * 4);
        // every drawn value is a legal level
        let x = aug.table.column("x").unwrap();
        for i in aug.incomplete_pseudo_rows() {
            assert!([1.0, 2.0, 3.0].contains(&x.values[i]));
        }
    }
}
