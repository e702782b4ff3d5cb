use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use nalgebra::{DMatrix, DVector};

use peee_core::augment::{GammaFit, GammaKind};
use peee_core::baselines::bootstrap_variance;
use peee_core::formula::{build_design, parse_formula, DesignInfo, Formula};
use peee_core::glm::Family;
use peee_core::peee::{
    peee_fit, variance_closed_form, variance_closed_form_mc, IncompleteSpec, Regime,
};
use peee_core::rng::RngStream;
use peee_core::tabular::{load_csv, MissingnessSummary, ObservationTable, TableSchema};
use peee_core::{Error, Result};

use crate::output::{self, env_stamp, EnvStamp, WALD_Z};

#[derive(Args)]
pub struct FitArgs {
    /// Input delimited text file (header row, UTF-8).
    #[arg(long)]
    pub data: PathBuf,
    /// Analysis model, e.g. "rehab ~ male + age + cat(race) + er".
    #[arg(long)]
    pub formula: String,
    /// Analysis family: logistic | linear.
    #[arg(long)]
    pub family: String,
    /// Name of the single incompletely observed column.
    #[arg(long)]
    pub incomplete: Option<String>,
    /// First-stage model for the incomplete column over fully observed
    /// columns, e.g. "race ~ male + age + er + rehab + year".
    #[arg(long)]
    pub gamma_formula: Option<String>,
    /// First-stage kind: multinomial | linear-mean | linear-mean-variance.
    #[arg(long)]
    pub gamma_kind: Option<String>,
    /// Augmentation regime: linear | discrete | monte-carlo.
    #[arg(long, default_value = "discrete")]
    pub regime: String,
    /// Imputation count for the monte-carlo regime.
    #[arg(long)]
    pub s: Option<usize>,
    /// Auxiliary column(s): fully observed, used only by the first stage.
    #[arg(long = "aux")]
    pub auxiliaries: Vec<String>,
    /// Categorical column(s) (integer-coded 1..K).
    #[arg(long = "categorical")]
    pub categorical: Vec<String>,
    /// Id column; row numbers are used when absent.
    #[arg(long)]
    pub id: Option<String>,
    /// Column holding the square of the incomplete column.
    #[arg(long)]
    pub square_companion: Option<String>,
    /// Extra missing-value sentinels (empty cell and "NA" are built in).
    #[arg(long = "sentinel")]
    pub sentinels: Vec<String>,
    /// Field delimiter: "," or "tab".
    #[arg(long, default_value = ",")]
    pub delimiter: String,
    /// Variance estimator: closed-form | bootstrap.
    #[arg(long, default_value = "closed-form")]
    pub variance: String,
    /// Bootstrap replications.
    #[arg(long, default_value_t = 100)]
    pub b: usize,
    /// Seed; required whenever the run involves randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for report.json, report.txt, timing.json.
    #[arg(long)]
    pub output: PathBuf,
    /// Allow monte-carlo stacking for a discrete conditional.
    #[arg(long)]
    pub force_monte_carlo: bool,
}

#[derive(serde::Serialize)]
struct ConfigEcho {
    data: String,
    formula: String,
    family: String,
    incomplete: Option<String>,
    gamma_formula: Option<String>,
    gamma_kind: Option<String>,
    regime: String,
    s: Option<usize>,
    variance: String,
    b: Option<usize>,
    seed: Option<u64>,
}

#[derive(serde::Serialize)]
struct CoefReport {
    name: String,
    estimate: f64,
    se: f64,
    ci_lower: f64,
    ci_upper: f64,
    z: f64,
    p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    odds_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    or_ci_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    or_ci_upper: Option<f64>,
}

#[derive(serde::Serialize)]
struct GammaDiag {
    kind: String,
    formula: String,
    converged: bool,
    iterations: usize,
    n_complete: usize,
    coefficients: Vec<(String, f64)>,
}

#[derive(serde::Serialize)]
struct FitReport {
    environment: EnvStamp,
    config: ConfigEcho,
    missingness: MissingnessSummary,
    augmentation: String,
    augmented_rows: usize,
    first_stage: Option<GammaDiag>,
    coefficients: Vec<CoefReport>,
}

#[derive(serde::Serialize)]
struct FitTiming {
    load_seconds: f64,
    fit_seconds: f64,
    variance_seconds: f64,
}

struct FitOutcome {
    theta: DVector<f64>,
    names: Vec<String>,
    aug_label: String,
    aug_rows: usize,
    first_stage: Option<GammaDiag>,
    closed_form: DMatrix<f64>,
    fit_seconds: f64,
    variance_seconds: f64,
    boot_se: Option<DVector<f64>>,
}

pub fn run(args: &FitArgs) -> Result<()> {
    let family: Family = args.family.parse()?;
    let analysis = parse_formula(&args.formula)?;
    let variance_kind = match args.variance.as_str() {
        "closed-form" | "bootstrap" => args.variance.clone(),
        other => return Err(Error::Config(format!("unknown variance estimator '{other}'"))),
    };
    let needs_rng = variance_kind == "bootstrap" || args.regime == "monte-carlo";
    if needs_rng && args.seed.is_none() {
        return Err(Error::Config(
            "this configuration involves randomness; pass --seed".into(),
        ));
    }

    let t_load = Instant::now();
    let table = load_table(args, &analysis)?;
    let load_seconds = t_load.elapsed().as_secs_f64();
    let missingness = table.missingness_summary();

    let t_fit = Instant::now();
    let outcome: FitOutcome;

    if let Some(incomplete) = &args.incomplete {
        let gamma_formula = parse_formula(args.gamma_formula.as_deref().ok_or_else(|| {
            Error::Config("--gamma-formula is required with --incomplete".into())
        })?)?;
        let kind: GammaKind = args
            .gamma_kind
            .as_deref()
            .ok_or_else(|| Error::Config("--gamma-kind is required with --incomplete".into()))?
            .parse()?;
        let regime = match args.regime.as_str() {
            "linear" => Regime::LinearMoment,
            "discrete" => Regime::Discrete,
            "monte-carlo" => Regime::MonteCarlo {
                s: args
                    .s
                    .ok_or_else(|| Error::Config("--s is required for monte-carlo".into()))?,
            },
            other => return Err(Error::Config(format!("unknown regime '{other}'"))),
        };
        let mut spec = IncompleteSpec::new(gamma_formula, kind, regime);
        spec.force_monte_carlo = args.force_monte_carlo;
        let mut mc_rng = args.seed.map(|s| RngStream::from_path(s, &[0]));
        let fit = peee_fit(&table, &analysis, family, &spec, mc_rng.as_mut())?;
        if table.incomplete_column() != Some(incomplete.as_str()) {
            return Err(Error::Config(format!(
                "--incomplete {incomplete} does not match the loaded table"
            )));
        }
        let fit_seconds = t_fit.elapsed().as_secs_f64();

        let t_var = Instant::now();
        let closed_form = match spec.regime {
            Regime::MonteCarlo { .. } => variance_closed_form_mc(&fit)?,
            _ => variance_closed_form(&fit)?,
        };
        let variance_seconds = t_var.elapsed().as_secs_f64();

        let aug_label = if missingness.m == 0 {
            "none (complete data)".to_string()
        } else {
            match spec.regime {
                Regime::LinearMoment => "linear-moment (single substitution)".to_string(),
                Regime::Discrete => "discrete (K pseudo-records per incomplete subject)".to_string(),
                Regime::MonteCarlo { s } => format!("monte-carlo (S={s} draws per incomplete subject)"),
            }
        };
        let boot_se = if variance_kind == "bootstrap" {
            let spec2 = spec.clone();
            let analysis2 = analysis.clone();
            let root = RngStream::from_path(args.seed.unwrap(), &[1]);
            let b = bootstrap_variance(
                &table,
                move |tab, stream| {
                    peee_fit(tab, &analysis2, family, &spec2, Some(stream))
                        .map(|f| f.theta_hat)
                },
                args.b,
                &root,
            )?;
            Some(b.se)
        } else {
            None
        };
        outcome = FitOutcome {
            theta: fit.theta_hat.clone(),
            names: fit.analysis_info.column_names.clone(),
            aug_label,
            aug_rows: fit.augmented.n_rows(),
            first_stage: Some(gamma_diag(&fit.gamma_fit)),
            closed_form,
            fit_seconds,
            variance_seconds,
            boot_se,
        };
    } else {
        // fully observed data: direct fit with the ordinary robust sandwich
        let design = build_design(&analysis, &table, None)?;
        let rows: Vec<usize> = (0..table.n_rows()).collect();
        let info = DesignInfo::new(&analysis, &table, &rows)?;
        let y = info.response_vector(&table, &rows, None)?;
        let w = DVector::from_element(table.n_rows(), 1.0);
        let fit = family.fit(&design, &y, &w)?;
        let fit_seconds = t_fit.elapsed().as_secs_f64();
        let t_var = Instant::now();
        let bread = fit.scaled_info_inverse(table.n_rows())?;
        let meat = fit.scores.transpose() * &fit.scores / table.n_rows() as f64;
        let closed_form = (&bread * meat * &bread) / table.n_rows() as f64;
        let variance_seconds = t_var.elapsed().as_secs_f64();
        outcome = FitOutcome {
            theta: fit.coefficients.clone(),
            names: fit.column_names.clone(),
            aug_label: "none (complete data)".to_string(),
            aug_rows: table.n_rows(),
            first_stage: None,
            closed_form,
            fit_seconds,
            variance_seconds,
            boot_se: None,
        };
    }
    let FitOutcome {
        theta,
        names,
        aug_label,
        aug_rows,
        first_stage,
        closed_form,
        fit_seconds,
        variance_seconds,
        boot_se,
    } = outcome;

    let d = theta.len();
    let se: DVector<f64> = match &boot_se {
        Some(se) => se.clone(),
        None => DVector::from_iterator(d, (0..d).map(|j| closed_form[(j, j)].sqrt())),
    };
    let logistic = family == Family::Logistic;
    let coefficients: Vec<CoefReport> = (0..d)
        .map(|j| {
            let est = theta[j];
            let s = se[j];
            let lo = est - WALD_Z * s;
            let hi = est + WALD_Z * s;
            let z = est / s;
            CoefReport {
                name: names[j].clone(),
                estimate: est,
                se: s,
                ci_lower: lo,
                ci_upper: hi,
                z,
                p_value: output::normal_p_value(z),
                odds_ratio: logistic.then(|| est.exp()),
                or_ci_lower: logistic.then(|| lo.exp()),
                or_ci_upper: logistic.then(|| hi.exp()),
            }
        })
        .collect();

    let report = FitReport {
        environment: env_stamp(),
        config: ConfigEcho {
            data: args.data.display().to_string(),
            formula: args.formula.clone(),
            family: args.family.clone(),
            incomplete: args.incomplete.clone(),
            gamma_formula: args.gamma_formula.clone(),
            gamma_kind: args.gamma_kind.clone(),
            regime: args.regime.clone(),
            s: args.s,
            variance: variance_kind.clone(),
            b: (variance_kind == "bootstrap").then_some(args.b),
            seed: args.seed,
        },
        missingness,
        augmentation: aug_label,
        augmented_rows: aug_rows,
        first_stage,
        coefficients,
    };

    output::ensure_dir(&args.output)?;
    output::write_json(&args.output, "report.json", &report)?;
    output::write_json(
        &args.output,
        "timing.json",
        &FitTiming {
            load_seconds,
            fit_seconds,
            variance_seconds,
        },
    )?;
    output::write_text(&args.output, "report.txt", &render_text(&report))?;
    println!("wrote {}", args.output.join("report.json").display());
    Ok(())
}

fn load_table(args: &FitArgs, analysis: &Formula) -> Result<ObservationTable> {
    let mut schema = TableSchema::new(analysis.response.clone());
    schema.id = args.id.clone();
    for t in &analysis.terms {
        schema.covariates.push(t.column().to_string());
    }
    if let Some(gf) = &args.gamma_formula {
        let gamma = parse_formula(gf)?;
        for col in gamma.columns() {
            let known = col == analysis.response
                || schema.covariates.iter().any(|c| c == col)
                || args.auxiliaries.iter().any(|a| a == col);
            if !known {
                schema.auxiliaries.push(col.to_string());
            }
        }
    }
    for a in &args.auxiliaries {
        if !schema.auxiliaries.contains(a) {
            schema.auxiliaries.push(a.clone());
        }
    }
    schema.incomplete = args.incomplete.clone();
    schema.square_companion = args.square_companion.clone();
    for c in &args.categorical {
        schema.categorical.insert(c.clone(), None);
    }
    for s in &args.sentinels {
        schema.missing_sentinels.push(s.clone());
    }
    schema.delimiter = match args.delimiter.as_str() {
        "," => b',',
        "tab" | "\\t" => b'\t',
        other => {
            let bytes = other.as_bytes();
            if bytes.len() != 1 {
                return Err(Error::Config(format!("bad delimiter '{other}'")));
            }
            bytes[0]
        }
    };
    load_csv(&args.data, &schema)
}

fn gamma_diag(g: &GammaFit) -> GammaDiag {
    let mut coefficients = Vec::new();
    match g.levels.as_ref() {
        Some(levels) => {
            let q = g.design_info.column_names.len();
            for (block, level) in levels.iter().skip(1).enumerate() {
                for (j, name) in g.design_info.column_names.iter().enumerate() {
                    coefficients.push((format!("level{level}:{name}"), g.gamma[block * q + j]));
                }
            }
        }
        None => {
            for (j, name) in g.design_info.column_names.iter().enumerate() {
                coefficients.push((name.clone(), g.gamma[j]));
            }
            if g.gamma.len() > g.design_info.column_names.len() {
                coefficients.push((
                    "residual_variance".to_string(),
                    g.gamma[g.gamma.len() - 1],
                ));
            }
        }
    }
    GammaDiag {
        kind: format!("{:?}", g.kind),
        formula: g.formula.to_string(),
        converged: g.converged,
        iterations: g.iterations,
        n_complete: g.n_complete,
        coefficients,
    }
}

fn render_text(r: &FitReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "model: {} ({})\n",
        r.config.formula, r.config.family
    ));
    out.push_str(&format!(
        "rows: {}   incomplete: {} ({:.1}%)\n",
        r.missingness.n,
        r.missingness.m,
        100.0 * r.missingness.rate
    ));
    out.push_str(&format!("augmentation: {} ({} rows)\n", r.augmentation, r.augmented_rows));
    out.push_str(&format!("variance: {}\n\n", r.config.variance));
    let logistic = r.coefficients.first().is_some_and(|c| c.odds_ratio.is_some());
    if logistic {
        out.push_str(&format!(
            "{:<22} {:>9} {:>10} {:>21} {:>9}\n",
            "Covariate", "OR", "estimate", "95% CI (OR)", "p-value"
        ));
        for c in &r.coefficients {
            out.push_str(&format!(
                "{:<22} {:>9.3} {:>10.4} ({:>8.3}, {:>8.3}) {:>9}\n",
                c.name,
                c.odds_ratio.unwrap(),
                c.estimate,
                c.or_ci_lower.unwrap(),
                c.or_ci_upper.unwrap(),
                fmt_p(c.p_value),
            ));
        }
    } else {
        out.push_str(&format!(
            "{:<22} {:>10} {:>9} {:>21} {:>9}\n",
            "Covariate", "estimate", "SE", "95% CI", "p-value"
        ));
        for c in &r.coefficients {
            out.push_str(&format!(
                "{:<22} {:>10.4} {:>9.4} ({:>8.4}, {:>8.4}) {:>9}\n",
                c.name, c.estimate, c.se, c.ci_lower, c.ci_upper,
                fmt_p(c.p_value),
            ));
        }
    }
    if let Some(g) = &r.first_stage {
        out.push_str(&format!(
            "\nfirst stage: {} [{}], converged={} after {} iterations on {} complete cases\n",
            g.formula, g.kind, g.converged, g.iterations, g.n_complete
        ));
    }
    out
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}
