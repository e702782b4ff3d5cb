use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use peee_core::baselines::bootstrap_variance;
use peee_core::glm::Family;
use peee_core::peee::{peee_fit, variance_closed_form};
use peee_core::rng::RngStream;
use peee_core::simstudy::{gen_sim1, Sim1Config, StudyDesign};
use peee_core::{Error, Result};

use crate::output::{self, env_stamp, EnvStamp};

#[derive(Args)]
pub struct BenchArgs {
    /// Comma-separated sample sizes, e.g. 1000,5000,10000.
    #[arg(long, default_value = "1000,5000,10000")]
    pub grid: String,
    /// Missingness level of the generating design.
    #[arg(long, default_value_t = -1.1)]
    pub eta: f64,
    /// Bootstrap replications to time against.
    #[arg(long, default_value_t = 100)]
    pub b: usize,
    /// Timing repetitions per grid point.
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory for report.json, report.txt, timing.json.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(serde::Serialize)]
struct BenchPoint {
    n: usize,
    missing_rate: f64,
    theta: Vec<f64>,
    closed_form_se: Vec<f64>,
    bootstrap_se: Vec<f64>,
}

#[derive(serde::Serialize)]
struct BenchReport {
    environment: EnvStamp,
    eta: f64,
    b: usize,
    trials: usize,
    seed: u64,
    points: Vec<BenchPoint>,
}

#[derive(serde::Serialize)]
struct TimingPoint {
    n: usize,
    closed_form_mean: f64,
    closed_form_sd: f64,
    bootstrap_mean: f64,
    bootstrap_sd: f64,
    speedup: f64,
}

#[derive(serde::Serialize)]
struct TimingReport {
    b: usize,
    trials: usize,
    points: Vec<TimingPoint>,
}

pub fn run(args: &BenchArgs) -> Result<()> {
    let grid: Vec<usize> = args
        .grid
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad grid entry '{t}'")))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() || args.trials == 0 {
        return Err(Error::Config("need a non-empty grid and trials >= 1".into()));
    }

    let mut points = Vec::new();
    let mut timings = Vec::new();
    for (gi, &n) in grid.iter().enumerate() {
        let design = StudyDesign::Sim1(Sim1Config {
            n,
            eta: args.eta,
            seed: args.seed,
        });
        let analysis = design.analysis_spec(args.b);
        let mut data_rng = RngStream::from_path(args.seed, &[gi as u64, 0]);
        let table = match design {
            StudyDesign::Sim1(ref c) => gen_sim1(c, &mut data_rng),
            _ => unreachable!(),
        };
        let fit = peee_fit(&table, &analysis.formula, Family::Logistic, &analysis.base, None)?;

        let mut cf_times = Vec::with_capacity(args.trials);
        let mut cov = None;
        for _ in 0..args.trials {
            let t0 = Instant::now();
            cov = Some(variance_closed_form(&fit)?);
            cf_times.push(t0.elapsed().as_secs_f64());
        }
        let cov = cov.unwrap();

        let mut boot_times = Vec::with_capacity(args.trials);
        let mut boot_se = None;
        for trial in 0..args.trials {
            let formula = analysis.formula.clone();
            let spec = analysis.base.clone();
            let root = RngStream::from_path(args.seed, &[gi as u64, 1, trial as u64]);
            let t0 = Instant::now();
            let boot = bootstrap_variance(
                &table,
                move |tab, _| {
                    peee_fit(tab, &formula, Family::Logistic, &spec, None).map(|f| f.theta_hat)
                },
                args.b,
                &root,
            )?;
            boot_times.push(t0.elapsed().as_secs_f64());
            if trial == 0 {
                boot_se = Some(boot.se);
            }
        }
        let boot_se = boot_se.unwrap();

        let d = fit.theta_hat.len();
        points.push(BenchPoint {
            n,
            missing_rate: table.missingness_summary().rate,
            theta: fit.theta_hat.iter().copied().collect(),
            closed_form_se: (0..d).map(|j| cov[(j, j)].sqrt()).collect(),
            bootstrap_se: boot_se.iter().copied().collect(),
        });
        let (cm, cs) = mean_sd(&cf_times);
        let (bm, bs) = mean_sd(&boot_times);
        timings.push(TimingPoint {
            n,
            closed_form_mean: cm,
            closed_form_sd: cs,
            bootstrap_mean: bm,
            bootstrap_sd: bs,
            speedup: bm / cm,
        });
    }

    let report = BenchReport {
        environment: env_stamp(),
        eta: args.eta,
        b: args.b,
        trials: args.trials,
        seed: args.seed,
        points,
    };
    let timing = TimingReport {
        b: args.b,
        trials: args.trials,
        points: timings,
    };

    output::ensure_dir(&args.output)?;
    output::write_json(&args.output, "report.json", &report)?;
    output::write_json(&args.output, "timing.json", &timing)?;
    output::write_text(&args.output, "report.txt", &render_text(&report, &timing))?;
    println!("wrote {}", args.output.join("report.json").display());
    Ok(())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn render_text(report: &BenchReport, timing: &TimingReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "variance timing, eta={} (bootstrap B={}, {} trials per point)\n\n",
        report.eta, report.b, report.trials
    ));
    out.push_str(&format!(
        "{:>8} {:>12} {:>10} {:>12} {:>10} {:>9}\n",
        "n", "closed mean", "sd", "boot mean", "sd", "speedup"
    ));
    for p in &timing.points {
        out.push_str(&format!(
            "{:>8} {:>12.4} {:>10.4} {:>12.3} {:>10.3} {:>8.1}x\n",
            p.n, p.closed_form_mean, p.closed_form_sd, p.bootstrap_mean, p.bootstrap_sd, p.speedup
        ));
    }
    out
}
