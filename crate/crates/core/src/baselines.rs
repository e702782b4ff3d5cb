//! Comparator estimators and resampling: complete-case analysis, stacked
//! (type B) multiple imputation, and the subject-level nonparametric
//! bootstrap.
//!
//! The stacked multiple-imputation fit shares its draw machinery with the
//! monte-carlo augmentation, so running both against the same rng stream
//! consumes identical uniforms and the two point estimates coincide exactly
//! (their estimating functions differ by the constant factor S). The
//! difference is purely computational: the stack holds n*S rows, the
//! monte-carlo expansion only n + m(S-1).

use nalgebra::{DMatrix, DVector};

use crate::augment::{augment_monte_carlo_forced, fit_gamma, GammaFit};
use crate::error::{Error, Result};
use crate::formula::{DesignInfo, DesignMatrix, Formula};
use crate::glm::{Family, FitResult};
use crate::peee::IncompleteSpec;
use crate::rng::RngStream;
use crate::tabular::ObservationTable;

/// Drop the incomplete rows and fit the analysis model directly.
pub fn complete_case_fit(
    table: &ObservationTable,
    analysis_formula: &Formula,
    family: Family,
) -> Result<FitResult> {
    let rows = table.complete_rows();
    if rows.is_empty() {
        return Err(Error::Schema("no complete cases".into()));
    }
    let info = DesignInfo::new(analysis_formula, table, &rows)?;
    let design = DesignMatrix {
        values: info.build(table, &rows, None)?,
        column_names: info.column_names.clone(),
    };
    let y = info.response_vector(table, &rows, None)?;
    let ones = DVector::from_element(rows.len(), 1.0);
    family.fit(&design, &y, &ones)
}

/// A stacked multiple-imputation fit, with the stack size retained for
/// comparison against the monte-carlo expansion.
#[derive(Debug, Clone)]
pub struct MibFit {
    pub fit: FitResult,
    pub gamma_fit: GammaFit,
    pub stacked_rows: usize,
    pub s: usize,
}

/// Type B multiple imputation: draw S full imputations, stack the S
/// completed copies (n*S rows), and run one weighted fit with weight 1/S
/// per row.
pub fn mib_fit(
    table: &ObservationTable,
    analysis_formula: &Formula,
    family: Family,
    spec: &IncompleteSpec,
    s: usize,
    rng: &mut RngStream,
) -> Result<MibFit> {
    if let Some(inc) = table.incomplete_column() {
        if spec.formula.response != inc {
            return Err(Error::Config(format!(
                "the imputation model must describe the incomplete column '{inc}'"
            )));
        }
    }
    let gamma_fit = fit_gamma(table, &spec.formula, spec.kind)?;
    // identical draw order to the monte-carlo expansion under a shared stream
    let aug = augment_monte_carlo_forced(table, &gamma_fit, s, rng)?;

    // assign each incomplete pseudo-record its within-subject draw index
    let mut draw_index = vec![0usize; aug.n_rows()];
    {
        let mut counter = vec![0usize; aug.n_subjects];
        for i in 0..aug.n_rows() {
            if !aug.r_flags[i] {
                draw_index[i] = counter[aug.source_row[i]];
                counter[aug.source_row[i]] += 1;
            }
        }
    }

    let all_rows: Vec<usize> = (0..aug.n_rows()).collect();
    let info = DesignInfo::new(analysis_formula, &aug.table, &all_rows)?;
    let x = info.build(&aug.table, &all_rows, None)?;
    let y = info.response_vector(&aug.table, &all_rows, None)?;

    // copy j of the stack: every complete row plus each subject's j-th draw
    let mut stacked: Vec<usize> = Vec::with_capacity(aug.n_subjects * s);
    for j in 0..s {
        for i in 0..aug.n_rows() {
            if aug.r_flags[i] || draw_index[i] == j {
                stacked.push(i);
            }
        }
    }
    let d = x.ncols();
    let mut xs = DMatrix::zeros(stacked.len(), d);
    let mut ys = DVector::zeros(stacked.len());
    for (r, &i) in stacked.iter().enumerate() {
        for c in 0..d {
            xs[(r, c)] = x[(i, c)];
        }
        ys[r] = y[i];
    }
    let design = DesignMatrix {
        values: xs,
        column_names: info.column_names.clone(),
    };
    let w = DVector::from_element(stacked.len(), 1.0 / s as f64);
    let fit = family.fit(&design, &ys, &w)?;
    Ok(MibFit {
        fit,
        gamma_fit,
        stacked_rows: stacked.len(),
        s,
    })
}

/// Replicate estimates and their column standard deviations.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub replicate_estimates: DMatrix<f64>,
    pub se: DVector<f64>,
    pub b: usize,
    pub failures: usize,
}

/// Fraction of replicates that must succeed.
const MIN_SUCCESS_FRACTION: f64 = 0.95;

/// Subject-level nonparametric bootstrap: resample n subjects with
/// replacement, re-run the full estimator (including any first-stage fit)
/// per replicate. Failed replicates are counted and excluded; more than 5%
/// failures aborts rather than silently biasing the spread.
pub fn bootstrap_variance<F>(
    table: &ObservationTable,
    estimator: F,
    b: usize,
    rng: &RngStream,
) -> Result<BootstrapResult>
where
    F: Fn(&ObservationTable, &mut RngStream) -> Result<DVector<f64>>,
{
    if b < 2 {
        return Err(Error::Config("bootstrap needs B >= 2 replications".into()));
    }
    let n = table.n_rows();
    let mut estimates: Vec<DVector<f64>> = Vec::with_capacity(b);
    let mut failures = 0usize;
    for rep in 0..b {
        let mut stream = rng.child(rep as u64);
        let idx: Vec<usize> = (0..n).map(|_| stream.below(n)).collect();
        let resampled = table.gather(&idx, true);
        match estimator(&resampled, &mut stream) {
            Ok(est) => estimates.push(est),
            Err(_) => failures += 1,
        }
    }
    let needed = (MIN_SUCCESS_FRACTION * b as f64).ceil() as usize;
    if estimates.len() < needed {
        return Err(Error::Numeric(format!(
            "only {} of {b} bootstrap replicates succeeded (need {needed})",
            estimates.len()
        )));
    }
    let d = estimates[0].len();
    let rows = estimates.len();
    let mut mat = DMatrix::zeros(rows, d);
    for (i, e) in estimates.iter().enumerate() {
        for j in 0..d {
            mat[(i, j)] = e[j];
        }
    }
    let mut se = DVector::zeros(d);
    for j in 0..d {
        let mean: f64 = mat.column(j).iter().sum::<f64>() / rows as f64;
        let ss: f64 = mat.column(j).iter().map(|v| (v - mean) * (v - mean)).sum();
        se[j] = (ss / (rows as f64 - 1.0)).sqrt();
    }
    Ok(BootstrapResult {
        replicate_estimates: mat,
        se,
        b,
        failures,
    })
}
