//! Report writing shared by the subcommands.
//!
//! Each run writes up to three files into the output directory:
//! `report.json` (machine-readable; byte-identical across runs with the
//! same config and seed), `report.txt` (aligned human-readable tables), and
//! `timing.json` (measured wall-clock, deliberately kept out of the
//! deterministic report).

use std::path::{Path, PathBuf};

use peee_core::{Error, Result};

/// Stamp embedded in every machine-readable report. Contains only
/// build-stable fields so it never breaks byte-identical reproduction.
#[derive(serde::Serialize)]
pub struct EnvStamp {
    pub package: &'static str,
    pub version: &'static str,
}

pub fn env_stamp() -> EnvStamp {
    EnvStamp {
        package: "peee",
        version: env!("CARGO_PKG_VERSION"),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("serializing {name}: {e}")))?;
    std::fs::write(&path, body + "\n")?;
    Ok(path)
}

pub fn write_text(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

/// Two-sided normal p-value for a z statistic.
pub fn normal_p_value(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - n.cdf(z.abs()))
}

pub const WALD_Z: f64 = 1.959963984540054;
