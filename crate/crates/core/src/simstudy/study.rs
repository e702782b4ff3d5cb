//! The replication engine: generate, estimate, aggregate.
//!
//! Replications run in a work pool; every replication derives its streams
//! from (master_seed, replication index, purpose), so the report is
//! identical whatever the thread count, and the reduction is a
//! deterministic fold in replication order.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::methods::build_method;
use crate::rng::RngStream;
use crate::simstudy::{CoefMetrics, MethodReport, StudyDesign, StudyReport};

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub design: StudyDesign,
    pub methods: Vec<String>,
    pub replications: usize,
    pub master_seed: u64,
    /// Bootstrap replications for methods that need one for their SEs.
    pub bootstrap_b: usize,
    /// Worker threads; 0 lets the pool pick.
    pub threads: usize,
}

struct MethodDraw {
    estimate: Option<(DVector<f64>, Option<DVector<f64>>)>,
    seconds: f64,
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    if config.replications < 2 {
        return Err(Error::Config("a study needs at least 2 replications".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let analysis = config.design.analysis_spec(config.bootstrap_b);
    // validate the method list up front
    for m in &config.methods {
        build_method(m, &analysis)?;
    }

    let run_rep = |r: usize| -> Vec<MethodDraw> {
        let mut data_rng = RngStream::from_path(config.master_seed, &[r as u64, 0]);
        let table = config.design.generate(&mut data_rng);
        config
            .methods
            .iter()
            .enumerate()
            .map(|(mi, name)| {
                let method = build_method(name, &analysis).expect("validated above");
                let mut rng = RngStream::from_path(config.master_seed, &[r as u64, 1, mi as u64]);
                let start = Instant::now();
                let estimate = method
                    .estimate(&table, &mut rng)
                    .ok()
                    .map(|e| (e.theta, e.se));
                MethodDraw {
                    estimate,
                    seconds: start.elapsed().as_secs_f64(),
                }
            })
            .collect()
    };

    let outcomes: Vec<Vec<MethodDraw>> = if config.threads == 1 {
        (0..config.replications).map(run_rep).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.replications).into_par_iter().map(run_rep).collect())
    };

    aggregate(config, outcomes)
}

fn aggregate(config: &StudyConfig, outcomes: Vec<Vec<MethodDraw>>) -> Result<StudyReport> {
    let truth = config.design.truth();
    let d = truth.len();
    let names = config.design.coefficient_names();
    let n_methods = config.methods.len();

    // per-method pools of successful estimates, in replication order
    let mut estimates: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n_methods];
    let mut ses: Vec<Vec<Option<DVector<f64>>>> = vec![Vec::new(); n_methods];
    let mut seconds: Vec<Vec<f64>> = vec![Vec::new(); n_methods];
    for rep in &outcomes {
        for (mi, draw) in rep.iter().enumerate() {
            seconds[mi].push(draw.seconds);
            if let Some((theta, se)) = &draw.estimate {
                estimates[mi].push(theta.clone());
                ses[mi].push(se.clone());
            }
        }
    }

    let variance = |mi: usize, j: usize| -> f64 {
        let xs = &estimates[mi];
        let mean: f64 = xs.iter().map(|t| t[j]).sum::<f64>() / xs.len() as f64;
        xs.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
    };

    // relative efficiency is anchored at the first method whose name starts
    // with "peee" (falling back to the first method)
    let ref_mi = config
        .methods
        .iter()
        .position(|m| m.starts_with("peee"))
        .unwrap_or(0);

    let mut methods = Vec::with_capacity(n_methods);
    for mi in 0..n_methods {
        let succ = estimates[mi].len();
        if succ < 2 {
            return Err(Error::Numeric(format!(
                "method '{}' succeeded in only {succ} replications",
                config.methods[mi]
            )));
        }
        let mut metrics = Vec::with_capacity(d);
        for j in 0..d {
            let mean: f64 = estimates[mi].iter().map(|t| t[j]).sum::<f64>() / succ as f64;
            let var = variance(mi, j);
            let bias_pct = if truth[j] != 0.0 {
                100.0 * (mean - truth[j]) / truth[j].abs()
            } else {
                mean - truth[j]
            };
            let mut covered = 0usize;
            let mut se_sum = 0.0;
            let mut se_count = 0usize;
            for (theta, se) in estimates[mi].iter().zip(&ses[mi]) {
                if let Some(se) = se {
                    se_sum += se[j];
                    se_count += 1;
                    if (theta[j] - truth[j]).abs() <= 1.96 * se[j] {
                        covered += 1;
                    }
                }
            }
            let (ase, cp) = if se_count > 0 {
                (
                    Some(se_sum / se_count as f64),
                    Some(covered as f64 / se_count as f64),
                )
            } else {
                (None, None)
            };
            let re = var / variance(ref_mi, j);
            metrics.push(CoefMetrics {
                coefficient: names[j].clone(),
                truth: truth[j],
                bias_pct,
                mcsd: var.sqrt(),
                ase,
                cp,
                re,
            });
        }
        let times = &seconds[mi];
        let mean_s: f64 = times.iter().sum::<f64>() / times.len() as f64;
        let sd_s = (times.iter().map(|t| (t - mean_s).powi(2)).sum::<f64>()
            / (times.len() as f64 - 1.0))
            .sqrt();
        methods.push(MethodReport {
            name: config.methods[mi].clone(),
            failures: config.replications - succ,
            metrics,
            mean_seconds: mean_s,
            sd_seconds: sd_s,
        });
    }

    Ok(StudyReport {
        design: config.design.label(),
        n: config.design.n(),
        replications: config.replications,
        master_seed: config.master_seed,
        coefficients: names,
        truth: truth.iter().copied().collect(),
        methods,
    })
}
