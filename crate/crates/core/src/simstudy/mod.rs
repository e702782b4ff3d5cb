//! Data-generating designs and the replication engine that turns them into
//! per-method operating characteristics (bias, spread, coverage, relative
//! efficiency, timing).

mod gen;
mod study;

pub use gen::{gen_sim1, gen_sim2};
pub use study::{run_study, StudyConfig};

use nalgebra::DVector;

use crate::augment::GammaKind;
use crate::error::{Error, Result};
use crate::formula::{parse_formula, Formula};
use crate::glm::Family;
use crate::methods::AnalysisSpec;
use crate::peee::{IncompleteSpec, Regime};
use crate::rng::RngStream;
use crate::tabular::ObservationTable;

/// Binary-response design: logistic outcome on a continuous and a 3-level
/// categorical covariate, the categorical masked through an auxiliary-driven
/// missingness model. `eta` tunes the missingness level (-1.1 gives about a
/// third missing, -0.2 about half).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Sim1Config {
    pub n: usize,
    pub eta: f64,
    pub seed: u64,
}

/// Continuous-response design with a nonlinear auxiliary effect and heavy
/// tailed (t with 3 df) errors; the response is masked. The scenario picks
/// the shape of the auxiliary effect and thereby the degree of first-stage
/// misspecification for a linear working model.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Sim2Config {
    pub n: usize,
    pub scenario: Scenario,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Scenario {
    Log,
    ExpDecay,
    SteepLogistic,
    LogGamma,
    Sin,
    Cos,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Log,
        Scenario::ExpDecay,
        Scenario::SteepLogistic,
        Scenario::LogGamma,
        Scenario::Sin,
        Scenario::Cos,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Log => "log",
            Scenario::ExpDecay => "exp-decay",
            Scenario::SteepLogistic => "steep-logistic",
            Scenario::LogGamma => "log-gamma",
            Scenario::Sin => "sin",
            Scenario::Cos => "cos",
        }
    }

    /// The auxiliary effect h(a).
    pub fn h(&self, a: f64) -> f64 {
        match self {
            Scenario::Log => (a + 0.5).ln(),
            Scenario::ExpDecay => (-a).exp(),
            Scenario::SteepLogistic => 1.0 / (1.0 + (-5.0 * (a - 2.5)).exp()),
            Scenario::LogGamma => statrs::function::gamma::ln_gamma(a),
            Scenario::Sin => a.sin(),
            Scenario::Cos => a.cos(),
        }
    }

    /// E[h(A)] for A uniform on [0, 5], in closed form.
    pub fn mean_h(&self) -> f64 {
        match self {
            Scenario::Log => (5.5 * (5.5f64.ln() - 1.0) - 0.5 * (0.5f64.ln() - 1.0)) / 5.0,
            Scenario::ExpDecay => (1.0 - (-5.0f64).exp()) / 5.0,
            // integral of the symmetric logistic over [0,5] is exactly 2.5
            Scenario::SteepLogistic => 0.5,
            // Raabe: integral of ln Gamma over [k, k+1] is ln(2 pi)/2 + k ln k - k
            Scenario::LogGamma => {
                let two_pi: f64 = std::f64::consts::TAU;
                let raabe: f64 = (0..5)
                    .map(|k| {
                        let k = k as f64;
                        0.5 * two_pi.ln() + if k > 0.0 { k * k.ln() - k } else { 0.0 }
                    })
                    .sum();
                raabe / 5.0
            }
            Scenario::Sin => (1.0 - 5.0f64.cos()) / 5.0,
            Scenario::Cos => 5.0f64.sin() / 5.0,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

/// A simulation design: how to generate one dataset, what the estimand is,
/// and which analysis/first-stage models the estimators should use.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub enum StudyDesign {
    Sim1(Sim1Config),
    Sim2(Sim2Config),
}

impl StudyDesign {
    pub fn n(&self) -> usize {
        match self {
            StudyDesign::Sim1(c) => c.n,
            StudyDesign::Sim2(c) => c.n,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            StudyDesign::Sim1(c) => c.seed,
            StudyDesign::Sim2(c) => c.seed,
        }
    }

    pub fn label(&self) -> String {
        match self {
            StudyDesign::Sim1(c) => format!("sim1(n={}, eta={})", c.n, c.eta),
            StudyDesign::Sim2(c) => format!("sim2(n={}, scenario={})", c.n, c.scenario.name()),
        }
    }

    pub fn generate(&self, rng: &mut RngStream) -> ObservationTable {
        match self {
            StudyDesign::Sim1(c) => gen_sim1(c, rng),
            StudyDesign::Sim2(c) => gen_sim2(c, rng),
        }
    }

    /// True analysis-model coefficients (for the continuous design the
    /// intercept absorbs the mean auxiliary effect).
    pub fn truth(&self) -> DVector<f64> {
        match self {
            StudyDesign::Sim1(_) => DVector::from_row_slice(&[-0.2, 0.5, -0.75, 0.25]),
            StudyDesign::Sim2(c) => {
                DVector::from_row_slice(&[1.0 + c.scenario.mean_h(), 1.0, 1.0])
            }
        }
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            StudyDesign::Sim1(_) => &["(intercept)", "z1", "z2=2", "z2=3"],
            StudyDesign::Sim2(_) => &["(intercept)", "z1", "z2"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// The analysis and first-stage models every estimator strategy shares.
    pub fn analysis_spec(&self, bootstrap_b: usize) -> AnalysisSpec {
        match self {
            StudyDesign::Sim1(_) => AnalysisSpec {
                formula: must_parse("y ~ z1 + cat(z2)"),
                family: Family::Logistic,
                base: IncompleteSpec::new(
                    must_parse("z2 ~ z1 + y + a"),
                    GammaKind::Multinomial,
                    Regime::Discrete,
                ),
                flex: None,
                bootstrap_b,
            },
            StudyDesign::Sim2(_) => AnalysisSpec {
                formula: must_parse("y ~ z1 + z2"),
                family: Family::Linear,
                base: IncompleteSpec::new(
                    must_parse("y ~ z1 + z2 + a"),
                    GammaKind::LinearMeanVariance,
                    Regime::LinearMoment,
                ),
                flex: Some(IncompleteSpec::new(
                    must_parse("y ~ z1 + z2 + bs(a,3,4)"),
                    GammaKind::LinearMeanVariance,
                    Regime::LinearMoment,
                )),
                bootstrap_b,
            },
        }
    }
}

fn must_parse(text: &str) -> Formula {
    parse_formula(text).expect("built-in formula")
}

/// Per-coefficient operating characteristics of one method.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoefMetrics {
    pub coefficient: String,
    pub truth: f64,
    /// 100 (mean estimate - truth) / |truth|; absolute bias if truth is 0.
    pub bias_pct: f64,
    pub mcsd: f64,
    pub ase: Option<f64>,
    pub cp: Option<f64>,
    pub re: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodReport {
    pub name: String,
    pub failures: usize,
    pub metrics: Vec<CoefMetrics>,
    /// Wall-clock per replication; excluded from serialization so the
    /// machine-readable report stays byte-identical across equal-seed runs.
    #[serde(skip)]
    pub mean_seconds: f64,
    #[serde(skip)]
    pub sd_seconds: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StudyReport {
    pub design: String,
    pub n: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub coefficients: Vec<String>,
    pub truth: Vec<f64>,
    pub methods: Vec<MethodReport>,
}

/// Volatile timing companion to a study report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TimingReport {
    pub design: String,
    pub methods: Vec<MethodTiming>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodTiming {
    pub name: String,
    pub mean_seconds: f64,
    pub sd_seconds: f64,
}

impl StudyReport {
    pub fn timing(&self) -> TimingReport {
        TimingReport {
            design: self.design.clone(),
            methods: self
                .methods
                .iter()
                .map(|m| MethodTiming {
                    name: m.name.clone(),
                    mean_seconds: m.mean_seconds,
                    sd_seconds: m.sd_seconds,
                })
                .collect(),
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Aligned-column text rendering mirroring the simulation tables:
    /// Method, coefficient, Bias (%), MCSD, ASE, CP, RE.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} | replications={} seed={}\n",
            self.design, self.replications, self.master_seed
        ));
        out.push_str(&format!(
            "{:<14} {:<12} {:>9} {:>8} {:>8} {:>7} {:>7}\n",
            "Method", "beta", "Bias (%)", "MCSD", "ASE", "CP", "RE"
        ));
        for m in &self.methods {
            for (i, c) in m.metrics.iter().enumerate() {
                let method = if i == 0 { m.name.as_str() } else { "" };
                out.push_str(&format!(
                    "{:<14} {:<12} {:>9.3} {:>8.3} {:>8} {:>7} {:>7.3}\n",
                    method,
                    c.coefficient,
                    c.bias_pct,
                    c.mcsd,
                    c.ase.map_or("-".to_string(), |v| format!("{v:.3}")),
                    c.cp.map_or("-".to_string(), |v| format!("{v:.3}")),
                    c.re,
                ));
            }
            if m.failures > 0 {
                out.push_str(&format!(
                    "{:<14} ({} failed replications excluded)\n",
                    "", m.failures
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scenario_shapes() {
        assert_abs_diff_eq!(Scenario::Log.h(0.5), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(Scenario::SteepLogistic.h(2.5), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(Scenario::Cos.h(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            Scenario::LogGamma.h(4.0),
            6.0f64.ln(), // Gamma(4) = 3! = 6
            epsilon = 1e-12
        );
    }

    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let m = 40_000;
        let h = (hi - lo) / m as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..m {
            acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn mean_h_matches_quadrature() {
        for sc in Scenario::ALL {
            let integral = if sc == Scenario::LogGamma {
                // ln Gamma diverges at 0; the recurrence
                // ln Gamma(a) = ln Gamma(a+1) - ln(a) turns [0,1] into the
                // smooth integral over [1,2] plus -int_0^1 ln = +1
                let on_01 = simpson(|x| sc.h(x), 1.0, 2.0) + 1.0;
                on_01 + simpson(|x| sc.h(x), 1.0, 5.0)
            } else {
                simpson(|x| sc.h(x), 0.0, 5.0)
            };
            assert_abs_diff_eq!(sc.mean_h(), integral / 5.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn truth_vectors() {
        let d1 = StudyDesign::Sim1(Sim1Config {
            n: 10,
            eta: -1.1,
            seed: 0,
        });
        assert_eq!(d1.truth().as_slice(), &[-0.2, 0.5, -0.75, 0.25]);
        let d2 = StudyDesign::Sim2(Sim2Config {
            n: 10,
            scenario: Scenario::Cos,
            seed: 0,
        });
        assert_abs_diff_eq!(d2.truth()[0], 1.0 + 5.0f64.sin() / 5.0, epsilon = 1e-15);
    }
}
