//! Estimator strategies behind a common trait, registered by name and
//! selected at runtime from config/CLI method lists.
//!
//! Spec strings: `cc`, `peee`, `peee-flex`, `mcpeee(S)`, `mcpeee-flex(S)`,
//! `mib(S)`, `mib-flex(S)`. The `-flex` variants swap in the flexible
//! first-stage model (when the study design defines one); the `(S)` suffix
//! sets the imputation count.

use nalgebra::DVector;

use crate::baselines::{bootstrap_variance, complete_case_fit, mib_fit};
use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::glm::Family;
use crate::peee::{
    peee_fit, variance_closed_form, variance_closed_form_mc, IncompleteSpec, Regime,
};
use crate::rng::RngStream;
use crate::tabular::ObservationTable;

/// Everything an estimator strategy needs to know about the problem: the
/// analysis model plus the default and (optional) flexible first-stage
/// specifications.
#[derive(Debug, Clone)]
pub struct AnalysisSpec {
    pub formula: Formula,
    pub family: Family,
    pub base: IncompleteSpec,
    pub flex: Option<IncompleteSpec>,
    /// Bootstrap replications for methods without a closed-form variance.
    pub bootstrap_b: usize,
}

impl AnalysisSpec {
    fn first_stage(&self, flex: bool) -> Result<IncompleteSpec> {
        if flex {
            self.flex
                .clone()
                .ok_or_else(|| Error::Config("no flexible first-stage model configured".into()))
        } else {
            Ok(self.base.clone())
        }
    }
}

/// Point estimate and (when the method provides one) standard errors.
#[derive(Debug, Clone)]
pub struct MethodEstimate {
    pub theta: DVector<f64>,
    pub se: Option<DVector<f64>>,
}

/// One interchangeable estimation strategy.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, table: &ObservationTable, rng: &mut RngStream) -> Result<MethodEstimate>;
}

/// Parsed method specification: registry key, imputation count, flex flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSpec {
    pub key: String,
    pub flex: bool,
    pub s: Option<usize>,
    pub raw: String,
}

impl MethodSpec {
    pub fn parse(raw: &str) -> Result<MethodSpec> {
        let raw_trim = raw.trim();
        let (head, s) = match raw_trim.split_once('(') {
            None => (raw_trim, None),
            Some((head, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(|| {
                    Error::Config(format!("method '{raw_trim}': missing ')'"))
                })?;
                let s: usize = inner.trim().parse().map_err(|_| {
                    Error::Config(format!("method '{raw_trim}': bad imputation count '{inner}'"))
                })?;
                if s < 1 {
                    return Err(Error::Config(format!(
                        "method '{raw_trim}': imputation count must be >= 1"
                    )));
                }
                (head, Some(s))
            }
        };
        let (key, flex) = match head.strip_suffix("-flex") {
            Some(prefix) => (prefix, true),
            None => (head, false),
        };
        Ok(MethodSpec {
            key: key.to_string(),
            flex,
            s,
            raw: raw_trim.to_string(),
        })
    }
}

struct Registration {
    key: &'static str,
    needs_s: bool,
    build: fn(&MethodSpec, &AnalysisSpec) -> Result<Box<dyn Estimator>>,
}

/// The strategy registry. Adding a method means adding a row.
static REGISTRY: &[Registration] = &[
    Registration {
        key: "cc",
        needs_s: false,
        build: |spec, analysis| {
            Ok(Box::new(CompleteCase {
                name: spec.raw.clone(),
                formula: analysis.formula.clone(),
                family: analysis.family,
            }))
        },
    },
    Registration {
        key: "peee",
        needs_s: false,
        build: |spec, analysis| {
            Ok(Box::new(Peee {
                name: spec.raw.clone(),
                formula: analysis.formula.clone(),
                family: analysis.family,
                incomplete: analysis.first_stage(spec.flex)?,
            }))
        },
    },
    Registration {
        key: "mcpeee",
        needs_s: true,
        build: |spec, analysis| {
            let mut incomplete = analysis.first_stage(spec.flex)?;
            if incomplete.kind == crate::augment::GammaKind::Multinomial {
                return Err(Error::Config(
                    "mcpeee needs a continuous conditional for its closed-form variance; \
                     with a discrete incomplete variable use peee (exact expansion) or \
                     mib(S) (bootstrap)"
                        .into(),
                ));
            }
            incomplete.regime = Regime::MonteCarlo { s: spec.s.unwrap() };
            Ok(Box::new(Peee {
                name: spec.raw.clone(),
                formula: analysis.formula.clone(),
                family: analysis.family,
                incomplete,
            }))
        },
    },
    Registration {
        key: "mib",
        needs_s: true,
        build: |spec, analysis| {
            Ok(Box::new(Mib {
                name: spec.raw.clone(),
                formula: analysis.formula.clone(),
                family: analysis.family,
                incomplete: analysis.first_stage(spec.flex)?,
                s: spec.s.unwrap(),
                bootstrap_b: analysis.bootstrap_b,
            }))
        },
    },
];

/// Registered method keys.
pub fn method_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|r| r.key).collect()
}

/// Build the estimator named by `spec_str` for the given analysis.
pub fn build_method(spec_str: &str, analysis: &AnalysisSpec) -> Result<Box<dyn Estimator>> {
    let spec = MethodSpec::parse(spec_str)?;
    let reg = REGISTRY
        .iter()
        .find(|r| r.key == spec.key)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown method '{}'; registered: {}",
                spec.raw,
                method_names().join(", ")
            ))
        })?;
    if reg.needs_s && spec.s.is_none() {
        return Err(Error::Config(format!(
            "method '{}' needs an imputation count, e.g. {}(5)",
            spec.raw, spec.key
        )));
    }
    if !reg.needs_s && spec.s.is_some() {
        return Err(Error::Config(format!(
            "method '{}' does not take an imputation count",
            spec.raw
        )));
    }
    (reg.build)(&spec, analysis)
}

// ---------------------------------------------------------------------------
// strategies

struct CompleteCase {
    name: String,
    formula: Formula,
    family: Family,
}

impl Estimator for CompleteCase {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, table: &ObservationTable, _rng: &mut RngStream) -> Result<MethodEstimate> {
        let fit = complete_case_fit(table, &self.formula, self.family)?;
        Ok(MethodEstimate {
            se: Some(fit.naive_se()),
            theta: fit.coefficients,
        })
    }
}

struct Peee {
    name: String,
    formula: Formula,
    family: Family,
    incomplete: IncompleteSpec,
}

impl Estimator for Peee {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, table: &ObservationTable, rng: &mut RngStream) -> Result<MethodEstimate> {
        let fit = peee_fit(table, &self.formula, self.family, &self.incomplete, Some(rng))?;
        let cov = match self.incomplete.regime {
            Regime::MonteCarlo { .. } => variance_closed_form_mc(&fit)?,
            _ => variance_closed_form(&fit)?,
        };
        let d = fit.d();
        let se = DVector::from_iterator(d, (0..d).map(|j| cov[(j, j)].sqrt()));
        Ok(MethodEstimate {
            theta: fit.theta_hat,
            se: Some(se),
        })
    }
}

struct Mib {
    name: String,
    formula: Formula,
    family: Family,
    incomplete: IncompleteSpec,
    s: usize,
    bootstrap_b: usize,
}

impl Estimator for Mib {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, table: &ObservationTable, rng: &mut RngStream) -> Result<MethodEstimate> {
        let mut point_stream = rng.child(0);
        let fit = mib_fit(
            table,
            &self.formula,
            self.family,
            &self.incomplete,
            self.s,
            &mut point_stream,
        )?;
        let boot_root = rng.child(1);
        let formula = self.formula.clone();
        let family = self.family;
        let incomplete = self.incomplete.clone();
        let s = self.s;
        let boot = bootstrap_variance(
            table,
            move |tab, stream| {
                mib_fit(tab, &formula, family, &incomplete, s, stream).map(|m| m.fit.coefficients)
            },
            self.bootstrap_b,
            &boot_root,
        )?;
        Ok(MethodEstimate {
            theta: fit.fit.coefficients,
            se: Some(boot.se),
        })
    }
}
