//! Two-stage estimation for parametric models with one incompletely
//! observed variable under missing-at-random, built around pseudo-expected
//! estimating equations: unevaluable score contributions are replaced by
//! their conditional expectations given the observed data, computed under a
//! first-stage model fitted on the complete cases. The headline feature is
//! a closed-form sandwich covariance for the resulting estimator that stays
//! valid with auxiliary variables and under a misspecified first-stage
//! model, so the bootstrap is only needed as a cross-check.
//!
//! Layout:
//! - [`tabular`]: observation tables with a missingness mask, CSV I/O
//! - [`formula`] / [`splines`]: model formulas, design matrices, B-splines
//! - [`glm`]: weighted least-squares / logit / multinomial-logit fits
//! - [`numdiff`]: forward-difference Jacobians
//! - [`augment`]: first-stage fits and pseudo-record dataset construction
//! - [`peee`]: the two-stage estimator and its sandwich covariances
//! - [`baselines`]: complete-case, stacked multiple imputation, bootstrap
//! - [`simstudy`]: data generators and the replication harness
//! - [`methods`]: named estimator strategies behind one trait

// Negated comparisons (`!(x > t)`) are NaN-propagating guards, and indexed
// loops over matrix dimensions mirror the written formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augment;
pub mod baselines;
pub mod error;
pub mod formula;
pub mod glm;
pub mod linalg;
pub mod methods;
pub mod numdiff;
pub mod peee;
pub mod rng;
pub mod simstudy;
pub mod splines;
pub mod tabular;

pub use error::{Error, ErrorClass, Result};
