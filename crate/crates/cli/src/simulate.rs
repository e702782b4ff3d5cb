use std::path::PathBuf;

use clap::Args;

use peee_core::simstudy::{
    run_study, Scenario, Sim1Config, Sim2Config, StudyConfig, StudyDesign,
};
use peee_core::{Error, Result};

use crate::output::{self, env_stamp, EnvStamp};

#[derive(Args)]
pub struct SimulateArgs {
    /// Study config file (TOML; see the README for the schema).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for report.json, report.txt, timing.json.
    #[arg(long)]
    pub output: PathBuf,
    /// Worker threads for the replication pool (0 = automatic).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(serde::Deserialize)]
struct StudyFile {
    design: String,
    n: usize,
    eta: Option<f64>,
    scenario: Option<String>,
    methods: Vec<String>,
    /// Desk-scale default keeps coverage bands meaningful (about +/-0.025
    /// at the nominal level) without paper-scale runtimes.
    #[serde(default = "default_replications")]
    replications: usize,
    seed: u64,
    bootstrap_b: Option<usize>,
}

fn default_replications() -> usize {
    300
}

#[derive(serde::Serialize)]
struct SimulateReport<'a> {
    environment: EnvStamp,
    study: &'a peee_core::simstudy::StudyReport,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.config)?;
    let file: StudyFile =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("study config: {e}")))?;
    let design = match file.design.as_str() {
        "sim1" => StudyDesign::Sim1(Sim1Config {
            n: file.n,
            eta: file
                .eta
                .ok_or_else(|| Error::Config("sim1 needs 'eta'".into()))?,
            seed: file.seed,
        }),
        "sim2" => {
            let scenario: Scenario = file
                .scenario
                .as_deref()
                .ok_or_else(|| Error::Config("sim2 needs 'scenario'".into()))?
                .parse()?;
            StudyDesign::Sim2(Sim2Config {
                n: file.n,
                scenario,
                seed: file.seed,
            })
        }
        other => return Err(Error::Config(format!("unknown design '{other}'"))),
    };
    let config = StudyConfig {
        design,
        methods: file.methods,
        replications: file.replications,
        master_seed: file.seed,
        bootstrap_b: file.bootstrap_b.unwrap_or(100),
        threads: args.threads,
    };
    let report = run_study(&config)?;

    output::ensure_dir(&args.output)?;
    output::write_json(
        &args.output,
        "report.json",
        &SimulateReport {
            environment: env_stamp(),
            study: &report,
        },
    )?;
    output::write_json(&args.output, "timing.json", &report.timing())?;
    output::write_text(&args.output, "report.txt", &report.render_table())?;
    println!("wrote {}", args.output.join("report.json").display());
    Ok(())
}
