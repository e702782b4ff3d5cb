//! Two-stage point estimation on pseudo-complete weighted data, and the
//! closed-form sandwich covariances that account for the estimated
//! first-stage parameter.
//!
//! Point estimation: fit the incomplete-variable model on the complete
//! cases, expand the table per the chosen regime, and run the weighted
//! analysis fit; the weighted-fit score equations are exactly the
//! pseudo-expected estimating equations, so the solution needs no extra
//! root finding.
//!
//! Covariance: with per-subject collapsed scores `psi_i`, first-stage
//! influence rows `omega_i`, and the correction matrix `G` (derivative of
//! the expected score with respect to the first-stage parameter; `H` in the
//! monte-carlo regime, differentiated through the frozen uniforms),
//!
//! ```text
//! Var(theta_hat) = B { n^-1 sum_i (psi_i + G omega_i)^{x2} } B / n,
//! B = n (X'WDX)^-1
//! ```
//!
//! With no missing rows the correction vanishes and this is the ordinary
//! robust (information-sandwich) covariance.

use nalgebra::{DMatrix, DVector};

use crate::augment::{
    augment_discrete, augment_linear_moment, augment_monte_carlo, augment_monte_carlo_forced,
    AugmentedTable, GammaFit, GammaKind, MomentPlan, Provenance,
};
use crate::error::{Error, Result};
use crate::formula::{DesignInfo, DesignMatrix, Formula, Overrides};
use crate::glm::{Family, FitResult};
use crate::linalg::symmetrize;
use crate::numdiff::{jacobian_fd, JacobianConfig};
use crate::rng::RngStream;
use crate::tabular::ObservationTable;

pub use crate::augment::fit_gamma;

/// How the incomplete variable's conditional expectation is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Regime {
    /// Deterministic substitution of conditional moments.
    LinearMoment,
    /// Exact K-pseudo-record expansion for a discrete variable.
    Discrete,
    /// S inverse-CDF draws per incomplete subject, weight 1/S each.
    MonteCarlo { s: usize },
}

/// First-stage specification: the model for the incomplete variable given
/// the fully observed variables, and the augmentation regime.
#[derive(Debug, Clone)]
pub struct IncompleteSpec {
    pub formula: Formula,
    pub kind: GammaKind,
    pub regime: Regime,
    /// Allow monte-carlo stacking even when the exact discrete expansion
    /// applies (the library refuses it otherwise).
    pub force_monte_carlo: bool,
}

impl IncompleteSpec {
    pub fn new(formula: Formula, kind: GammaKind, regime: Regime) -> Self {
        IncompleteSpec {
            formula,
            kind,
            regime,
            force_monte_carlo: false,
        }
    }
}

/// A fitted two-stage estimator, with everything the variance assembly
/// needs retained.
#[derive(Debug, Clone)]
pub struct PeeeFit {
    pub theta_hat: DVector<f64>,
    pub gamma_fit: GammaFit,
    pub augmented: AugmentedTable,
    pub analysis_fit: FitResult,
    pub regime: Regime,
    pub family: Family,
    pub analysis_formula: Formula,
    pub analysis_info: DesignInfo,
    pub n_subjects: usize,
}

impl PeeeFit {
    pub fn d(&self) -> usize {
        self.theta_hat.len()
    }

    /// Number of incomplete subjects in the original table.
    pub fn m_incomplete(&self) -> usize {
        let mut seen = vec![false; self.n_subjects];
        for (row, &subject) in self.augmented.source_row.iter().enumerate() {
            if !self.augmented.r_flags[row] {
                seen[subject] = true;
            }
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// Two-stage fit: first-stage model on the complete cases, augmentation
/// per the regime, weighted analysis fit on the pseudo-complete table.
/// `rng` is only consulted by the monte-carlo regime.
pub fn peee_fit(
    table: &ObservationTable,
    analysis_formula: &Formula,
    family: Family,
    spec: &IncompleteSpec,
    mut rng: Option<&mut RngStream>,
) -> Result<PeeeFit> {
    if let Some(inc) = table.incomplete_column() {
        if spec.formula.response != inc {
            return Err(Error::Config(format!(
                "the first-stage formula must model the incomplete column '{inc}', \
                 found response '{}'",
                spec.formula.response
            )));
        }
        let sq = table.square_companion();
        let referenced = analysis_formula.response == inc
            || analysis_formula
                .terms
                .iter()
                .any(|t| t.column() == inc || Some(t.column()) == sq);
        if !referenced {
            return Err(Error::Config(format!(
                "incomplete column '{inc}' is not referenced by the analysis model"
            )));
        }
    }

    let gamma_fit = fit_gamma(table, &spec.formula, spec.kind)?;
    let augmented = match spec.regime {
        Regime::LinearMoment => {
            let plan = if table.square_companion().is_some() {
                MomentPlan::MeanAndSquare
            } else {
                MomentPlan::MeanOnly
            };
            augment_linear_moment(table, &gamma_fit, plan)?
        }
        Regime::Discrete => augment_discrete(table, &gamma_fit)?,
        Regime::MonteCarlo { s } => {
            let rng = rng.take().ok_or_else(|| {
                Error::Config("the monte-carlo regime needs an rng stream".into())
            })?;
            if spec.force_monte_carlo {
                augment_monte_carlo_forced(table, &gamma_fit, s, rng)?
            } else {
                augment_monte_carlo(table, &gamma_fit, s, rng)?
            }
        }
    };

    let all_rows: Vec<usize> = (0..augmented.n_rows()).collect();
    let analysis_info = DesignInfo::new(analysis_formula, &augmented.table, &all_rows)?;
    let design = DesignMatrix {
        values: analysis_info.build(&augmented.table, &all_rows, None)?,
        column_names: analysis_info.column_names.clone(),
    };
    let y = analysis_info.response_vector(&augmented.table, &all_rows, None)?;
    let analysis_fit = family.fit(&design, &y, &augmented.weights)?;

    Ok(PeeeFit {
        theta_hat: analysis_fit.coefficients.clone(),
        gamma_fit,
        augmented,
        analysis_fit,
        regime: spec.regime,
        family,
        analysis_formula: analysis_formula.clone(),
        analysis_info,
        n_subjects: table.n_rows(),
    })
}

/// Sum each subject's weighted pseudo-record score rows: row i is the
/// subject's pseudo-expected score contribution at the solution.
pub fn collapse_subject_scores(analysis_fit: &FitResult, augmented: &AugmentedTable) -> DMatrix<f64> {
    let d = analysis_fit.p();
    let mut out = DMatrix::zeros(augmented.n_subjects, d);
    for (row, &subject) in augmented.source_row.iter().enumerate() {
        for j in 0..d {
            out[(subject, j)] += analysis_fit.scores[(row, j)];
        }
    }
    out
}

/// The map gamma -> n^-1 sum over incomplete pseudo-records of their
/// (re)weighted score contributions at theta_hat. Its Jacobian is the
/// correction matrix: weights vary with gamma in the discrete regime,
/// substituted values vary in the linear-moment and monte-carlo regimes.
fn expected_score_sum(fit: &PeeeFit, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    let aug = &fit.augmented;
    let rows = aug.incomplete_pseudo_rows();
    let d = fit.d();
    if rows.is_empty() {
        return Ok(DVector::zeros(d));
    }
    let n = fit.n_subjects as f64;
    match aug.provenance {
        Provenance::Discrete => {
            let probs = fit.gamma_fit.predict_probs_at(gamma, &aug.table, &rows)?;
            let levels = fit.gamma_fit.levels.as_ref().unwrap();
            let inc_col = aug.table.column(
                fit.analysis_pseudo_column()
                    .ok_or_else(|| Error::State("no incomplete column".into()))?,
            )?;
            let x = fit.analysis_info.build(&aug.table, &rows, None)?;
            let y = fit.analysis_info.response_vector(&aug.table, &rows, None)?;
            let scores = fit.family.scores_unweighted(&fit.theta_hat, &x, &y);
            let mut sum = DVector::zeros(d);
            for (i, &row) in rows.iter().enumerate() {
                let code = inc_col.values[row] as i64;
                let k = levels.iter().position(|&l| l == code).ok_or_else(|| {
                    Error::State(format!("pseudo-record level {code} not in the level set"))
                })?;
                let w = probs[(i, k)];
                for j in 0..d {
                    sum[j] += w * scores[(i, j)];
                }
            }
            Ok(sum / n)
        }
        Provenance::LinearMoment | Provenance::MonteCarlo => {
            let inc = fit
                .analysis_pseudo_column()
                .ok_or_else(|| Error::State("no incomplete column".into()))?;
            let values = match aug.provenance {
                Provenance::LinearMoment => fit.gamma_fit.predict_mean_at(gamma, &aug.table, &rows)?,
                Provenance::MonteCarlo => {
                    let us: Vec<f64> = rows
                        .iter()
                        .map(|&r| {
                            aug.uniforms[r].ok_or_else(|| {
                                Error::State("monte-carlo uniforms were not retained".into())
                            })
                        })
                        .collect::<Result<_>>()?;
                    DVector::from_vec(fit.gamma_fit.inverse_cdf_at(gamma, &aug.table, &rows, &us)?)
                }
                Provenance::Discrete => unreachable!(),
            };
            let mut ov = Overrides::new();
            let mut col_vals = aug.table.column(inc)?.values.clone();
            for (i, &r) in rows.iter().enumerate() {
                col_vals[r] = values[i];
            }
            ov.insert(inc.to_string(), col_vals);
            if let Some(sq) = fit.square_companion_name() {
                let mut sq_vals = aug.table.column(&sq)?.values.clone();
                match aug.provenance {
                    Provenance::LinearMoment => {
                        let eta2 = fit.gamma_fit.eta2_of(gamma)?;
                        for (i, &r) in rows.iter().enumerate() {
                            sq_vals[r] = values[i] * values[i] + eta2;
                        }
                    }
                    _ => {
                        for (i, &r) in rows.iter().enumerate() {
                            sq_vals[r] = values[i] * values[i];
                        }
                    }
                }
                ov.insert(sq, sq_vals);
            }
            let x = fit.analysis_info.build(&aug.table, &rows, Some(&ov))?;
            let y = fit.analysis_info.response_vector(&aug.table, &rows, Some(&ov))?;
            let scores = fit.family.scores_unweighted(&fit.theta_hat, &x, &y);
            let mut sum = DVector::zeros(d);
            for (i, &row) in rows.iter().enumerate() {
                let w = aug.weights[row];
                for j in 0..d {
                    sum[j] += w * scores[(i, j)];
                }
            }
            Ok(sum / n)
        }
    }
}

impl PeeeFit {
    /// Name of the column whose pseudo-values the augmentation substituted
    /// (the first-stage formula's response by construction).
    fn analysis_pseudo_column(&self) -> Option<&str> {
        Some(self.gamma_fit.formula.response.as_str())
    }

    fn square_companion_name(&self) -> Option<String> {
        self.augmented.square_companion.clone()
    }
}

/// Correction matrix for the exact-expectation regimes: the Jacobian of the
/// expected-score map with respect to the first-stage parameter, by forward
/// finite differences.
pub fn compute_g_hat(fit: &PeeeFit) -> Result<DMatrix<f64>> {
    match fit.regime {
        Regime::LinearMoment | Regime::Discrete => {}
        Regime::MonteCarlo { .. } => {
            return Err(Error::Config(
                "the monte-carlo regime uses the draw-path correction instead".into(),
            ))
        }
    }
    correction_matrix(fit)
}

/// Correction matrix for the monte-carlo regime, differentiating through
/// the retained uniforms.
pub fn compute_h_hat(fit: &PeeeFit) -> Result<DMatrix<f64>> {
    match fit.regime {
        Regime::MonteCarlo { .. } => {}
        _ => {
            return Err(Error::Config(
                "the draw-path correction applies to the monte-carlo regime only".into(),
            ))
        }
    }
    reject_discrete_draw_path(fit)?;
    correction_matrix(fit)
}

/// A discrete conditional's inverse CDF is a step function of the
/// first-stage parameter, so the draw-path derivative is zero almost
/// everywhere and the resulting covariance silently loses the first-stage
/// correction. Refuse instead: the exact discrete expansion (or the
/// bootstrap) is the valid route.
fn reject_discrete_draw_path(fit: &PeeeFit) -> Result<()> {
    if fit.gamma_fit.kind == GammaKind::Multinomial
        && !fit.augmented.incomplete_pseudo_rows().is_empty()
    {
        return Err(Error::Config(
            "the draw-path correction needs a smooth inverse CDF; a discrete conditional \
             has none (use the discrete regime's exact expansion, or bootstrap the \
             monte-carlo point estimator)"
                .into(),
        ));
    }
    Ok(())
}

fn correction_matrix(fit: &PeeeFit) -> Result<DMatrix<f64>> {
    let q = fit.gamma_fit.q();
    if fit.augmented.incomplete_pseudo_rows().is_empty() {
        return Ok(DMatrix::zeros(fit.d(), q));
    }
    jacobian_fd(
        |g| expected_score_sum(fit, g),
        &fit.gamma_fit.gamma,
        &JacobianConfig::default(),
    )
}

/// Pieces of the sandwich, exposed for inspection and testing.
#[derive(Debug, Clone)]
pub struct SandwichComponents {
    /// n times the inverse observed information of the weighted fit.
    pub psi_dot_inv: DMatrix<f64>,
    /// Per-subject collapsed scores (n x d).
    pub subject_scores: DMatrix<f64>,
    /// G (exact regimes) or H (monte-carlo), d x q; zero when nothing is
    /// missing.
    pub correction: DMatrix<f64>,
    /// First-stage influence rows (n x q).
    pub omega_hat: DMatrix<f64>,
}

pub fn sandwich_components(fit: &PeeeFit) -> Result<SandwichComponents> {
    let n = fit.n_subjects;
    let psi_dot_inv = fit.analysis_fit.scaled_info_inverse(n)?;
    let subject_scores = collapse_subject_scores(&fit.analysis_fit, &fit.augmented);
    let correction = if fit.augmented.incomplete_pseudo_rows().is_empty() {
        DMatrix::zeros(fit.d(), fit.gamma_fit.q())
    } else {
        correction_matrix(fit)?
    };
    let omega_hat = fit.gamma_fit.influence_rows(n);
    Ok(SandwichComponents {
        psi_dot_inv,
        subject_scores,
        correction,
        omega_hat,
    })
}

fn assemble(fit: &PeeeFit, c: &SandwichComponents) -> DMatrix<f64> {
    let n = fit.n_subjects as f64;
    // corrected_i = psi_i + G omega_i, stacked as rows
    let corrected = &c.subject_scores + &c.omega_hat * c.correction.transpose();
    let meat = corrected.transpose() * &corrected / n;
    let mut var = (&c.psi_dot_inv * meat * &c.psi_dot_inv) / n;
    symmetrize(&mut var);
    var
}

/// Closed-form covariance of the estimator under the exact-expectation
/// regimes (robust sandwich plus the first-stage correction). With no
/// missing rows the correction is skipped and this is the ordinary robust
/// sandwich of the complete-data fit.
pub fn variance_closed_form(fit: &PeeeFit) -> Result<DMatrix<f64>> {
    if !fit.augmented.incomplete_pseudo_rows().is_empty() {
        if let Regime::MonteCarlo { .. } = fit.regime {
            return Err(Error::Config(
                "use the monte-carlo covariance for a monte-carlo fit".into(),
            ));
        }
    }
    let c = sandwich_components(fit)?;
    Ok(assemble(fit, &c))
}

/// Closed-form covariance under the monte-carlo regime (the correction is
/// the draw-path derivative; the collapsed scores already average over the
/// S pseudo-records).
pub fn variance_closed_form_mc(fit: &PeeeFit) -> Result<DMatrix<f64>> {
    if !fit.augmented.incomplete_pseudo_rows().is_empty() {
        match fit.regime {
            Regime::MonteCarlo { .. } => {}
            _ => {
                return Err(Error::Config(
                    "the monte-carlo covariance applies to a monte-carlo fit".into(),
                ))
            }
        }
        reject_discrete_draw_path(fit)?;
    }
    let c = sandwich_components(fit)?;
    Ok(assemble(fit, &c))
}
