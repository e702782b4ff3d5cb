//! End-to-end checks of the `peee` binary: fitting a synthetic dataset with
//! the same shape as a hospital-registry analysis (binary outcome, masked
//! 3-level covariate, calendar-year auxiliary), exit codes, and output
//! well-formedness.

use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};

use peee_core::rng::RngStream;
use peee_core::tabular::{ColumnRole, ObservationTable, TableBuilder};

/// Every test here takes this lock: the binary invocations are cheap, and
/// the timing-sensitive ones must not contend for cores on a small CI box.
fn timing_lock() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|e| e.into_inner())
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Synthetic registry-shaped dataset: rehab ~ male + age + cat(race) + er,
/// race 3-level and partially masked, year auxiliary driving missingness.
fn registry_table(n: usize, seed: u64, with_missing: bool) -> ObservationTable {
    let mut rng = RngStream::new(seed);
    let mut male = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut er = Vec::with_capacity(n);
    let mut year = Vec::with_capacity(n);
    let mut race = Vec::with_capacity(n);
    let mut rehab = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for _ in 0..n {
        let m = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
        let a = 50.0 + 12.0 * rng.normal();
        let e = if rng.bernoulli(0.6) { 1.0 } else { 0.0 };
        let y = 2004.0 + (rng.uniform() * 7.0).floor();
        let lp2 = -0.5 + 0.1 * m - 0.15 * (y - 2007.0);
        let lp3 = -1.0 + 0.2 * e + 0.1 * (y - 2007.0);
        let d = 1.0 + lp2.exp() + lp3.exp();
        let u = rng.uniform();
        let r = if u < 1.0 / d {
            1.0
        } else if u < (1.0 + lp2.exp()) / d {
            2.0
        } else {
            3.0
        };
        let lp = -1.0 + 0.05 * m + 0.02 * (a - 50.0)
            - 0.3 * if r == 2.0 { 1.0 } else { 0.0 }
            - 0.6 * if r == 3.0 { 1.0 } else { 0.0 }
            + 1.2 * e;
        let rh = if rng.bernoulli(expit(lp)) { 1.0 } else { 0.0 };
        let miss = with_missing && rng.bernoulli(expit(-1.2 + 0.25 * (y - 2007.0)));
        male.push(m);
        age.push(a);
        er.push(e);
        year.push(y);
        race.push(r);
        rehab.push(rh);
        mask.push(miss);
    }
    TableBuilder::new()
        .numeric("rehab", ColumnRole::Response, rehab)
        .numeric("male", ColumnRole::Covariate, male)
        .numeric("age", ColumnRole::Covariate, age)
        .categorical("race", ColumnRole::Covariate, vec![1, 2, 3], race)
        .numeric("er", ColumnRole::Covariate, er)
        .numeric("year", ColumnRole::Auxiliary, year)
        .incomplete("race", mask)
        .build()
        .unwrap()
}

fn peee_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_peee"))
}

fn fit_cmd(data: &Path, out: &Path) -> Command {
    let mut cmd = peee_bin();
    cmd.args([
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--formula",
        "rehab ~ male + age + cat(race) + er",
        "--family",
        "logistic",
        "--incomplete",
        "race",
        "--gamma-formula",
        "race ~ male + age + er + rehab + year",
        "--gamma-kind",
        "multinomial",
        "--regime",
        "discrete",
        "--categorical",
        "race",
        "--id",
        "id",
        "--output",
        out.to_str().unwrap(),
    ]);
    cmd
}

#[test]
fn fit_reports_odds_ratios_and_missingness() {
    let _serial = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("registry.csv");
    let table = registry_table(600, 31, true);
    table.write_csv(&data).unwrap();
    let out = dir.path().join("out");
    let status = fit_cmd(&data, &out).status().unwrap();
    assert!(status.success());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let miss = &report["missingness"];
    assert_eq!(miss["n"].as_u64().unwrap(), 600);
    assert_eq!(
        miss["m"].as_u64().unwrap() as usize,
        table.missingness_summary().m
    );
    assert!(report["augmentation"].as_str().unwrap().contains("discrete"));
    for c in report["coefficients"].as_array().unwrap() {
        let est = c["estimate"].as_f64().unwrap();
        let or = c["odds_ratio"].as_f64().unwrap();
        assert!((or - est.exp()).abs() < 1e-12);
        assert!(c["p_value"].as_f64().unwrap() >= 0.0);
    }
    let txt = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(txt.contains("OR"));
    assert!(out.join("timing.json").exists());
}

#[test]
fn fit_bootstrap_agrees_with_closed_form_within_20pct() {
    let _serial = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("registry.csv");
    registry_table(800, 7, true).write_csv(&data).unwrap();

    let out_cf = dir.path().join("cf");
    assert!(fit_cmd(&data, &out_cf).status().unwrap().success());
    let out_bs = dir.path().join("bs");
    let mut cmd = fit_cmd(&data, &out_bs);
    cmd.args(["--variance", "bootstrap", "--b", "100", "--seed", "5"]);
    assert!(cmd.status().unwrap().success());

    let cf: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_cf.join("report.json")).unwrap())
            .unwrap();
    let bs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_bs.join("report.json")).unwrap())
            .unwrap();
    let cf_se: Vec<f64> = cf["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["se"].as_f64().unwrap())
        .collect();
    let bs_se: Vec<f64> = bs["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["se"].as_f64().unwrap())
        .collect();
    for (j, (a, b)) in cf_se.iter().zip(&bs_se).enumerate() {
        let rel = (a - b).abs() / b;
        assert!(rel < 0.20, "coefficient {j}: closed {a} vs bootstrap {b}");
    }
}

#[test]
fn fit_complete_data_flags_no_augmentation() {
    let _serial = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("complete.csv");
    registry_table(200, 3, false).write_csv(&data).unwrap();

    // with the incomplete column declared but nothing masked
    let out = dir.path().join("out1");
    assert!(fit_cmd(&data, &out).status().unwrap().success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["augmentation"].as_str().unwrap(),
        "none (complete data)"
    );

    // and without declaring any incomplete column at all
    let out2 = dir.path().join("out2");
    let status = peee_bin()
        .args([
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--formula",
            "rehab ~ male + age + cat(race) + er",
            "--family",
            "logistic",
            "--categorical",
            "race",
            "--id",
            "id",
            "--output",
            out2.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["augmentation"].as_str().unwrap(),
        "none (complete data)"
    );
}

#[test]
fn exit_codes_distinguish_usage_data_numerical() {
    let _serial = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("registry.csv");
    registry_table(150, 9, true).write_csv(&data).unwrap();

    // usage: bad variance choice
    let mut cmd = fit_cmd(&data, &dir.path().join("u"));
    cmd.args(["--variance", "nope"]);
    assert_eq!(cmd.status().unwrap().code(), Some(1));

    // usage: clap-level unknown flag
    let code = peee_bin().args(["fit", "--nonsense"]).status().unwrap().code();
    assert_eq!(code, Some(1));

    // data: file does not exist
    let code = fit_cmd(Path::new("/nonexistent/x.csv"), &dir.path().join("d"))
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(2));

    // numerical: an exactly collinear analysis design
    let mut table = registry_table(150, 9, true);
    let age = table.column("age").unwrap().values.clone();
    table = {
        let mut b = TableBuilder::new().subject_ids(table.subject_ids().to_vec());
        for col in table.columns() {
            b = match col.levels() {
                Some(levels) => b.categorical(
                    &col.name,
                    table.role(&col.name).unwrap(),
                    levels.to_vec(),
                    col.values.clone(),
                ),
                None => b.numeric(&col.name, table.role(&col.name).unwrap(), col.values.clone()),
            };
            if col.name == "age" {
                b = b.numeric("age2", ColumnRole::Covariate, age.clone());
            }
        }
        b.incomplete("race", table.column("race").unwrap().missing.clone())
            .build()
            .unwrap()
    };
    let data2 = dir.path().join("collinear.csv");
    table.write_csv(&data2).unwrap();
    let mut cmd = peee_bin();
    cmd.args([
        "fit",
        "--data",
        data2.to_str().unwrap(),
        "--formula",
        "rehab ~ male + age + age2 + cat(race) + er",
        "--family",
        "logistic",
        "--incomplete",
        "race",
        "--gamma-formula",
        "race ~ male + er + rehab + year",
        "--gamma-kind",
        "multinomial",
        "--categorical",
        "race",
        "--id",
        "id",
        "--output",
        dir.path().join("n2").to_str().unwrap(),
    ]);
    assert_eq!(cmd.status().unwrap().code(), Some(3));
}

#[test]
fn simulate_smoke_runs_quickly_and_is_well_formed() {
    let _serial = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(
        &cfg,
        "design = \"sim1\"\nn = 250\neta = -1.1\nmethods = [\"cc\", \"peee\", \"mib(3)\"]\nreplications = 2\nseed = 99\nbootstrap_b = 10\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let start = std::time::Instant::now();
    let status = peee_bin()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
            "--threads",
            "1",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(start.elapsed().as_secs() < 10, "smoke run exceeded 10s");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["study"]["replications"].as_u64(), Some(2));
    assert_eq!(report["study"]["methods"].as_array().unwrap().len(), 3);
    assert!(out.join("timing.json").exists());
    let txt = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(txt.contains("mib(3)"));
}

#[test]
fn simulate_emits_paper_style_method_tables() {
    let _serial = timing_lock();
    let dir = tempfile::tempdir().unwrap();

    // binary-outcome design with the stacked-imputation comparators
    let cfg1 = dir.path().join("t1.toml");
    std::fs::write(
        &cfg1,
        "design = \"sim1\"\nn = 250\neta = -1.1\nmethods = [\"peee\", \"mib(5)\", \"mib(20)\"]\nreplications = 3\nseed = 12\nbootstrap_b = 10\n",
    )
    .unwrap();
    let out1 = dir.path().join("t1");
    assert!(peee_bin()
        .args([
            "simulate",
            "--config",
            cfg1.to_str().unwrap(),
            "--output",
            out1.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("report.json")).unwrap()).unwrap();
    let methods = report["study"]["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        assert_eq!(m["metrics"].as_array().unwrap().len(), 4);
        for c in m["metrics"].as_array().unwrap() {
            for key in ["bias_pct", "mcsd", "ase", "cp", "re"] {
                assert!(c[key].is_number(), "missing {key}");
            }
        }
    }

    // continuous design with complete-case and the flexible variants
    let cfg2 = dir.path().join("t2.toml");
    std::fs::write(
        &cfg2,
        "design = \"sim2\"\nn = 300\nscenario = \"log\"\nmethods = [\"cc\", \"mib(10)\", \"peee\", \"mib-flex(10)\", \"peee-flex\"]\nreplications = 3\nseed = 12\nbootstrap_b = 10\n",
    )
    .unwrap();
    let out2 = dir.path().join("t2");
    assert!(peee_bin()
        .args([
            "simulate",
            "--config",
            cfg2.to_str().unwrap(),
            "--output",
            out2.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let txt = std::fs::read_to_string(out2.join("report.txt")).unwrap();
    for name in ["cc", "mib(10)", "peee", "mib-flex(10)", "peee-flex"] {
        assert!(txt.contains(name), "missing method row {name}");
    }
}

#[test]
fn bench_single_trial_emits_well_formed_report() {
    let _serial = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = peee_bin()
        .args([
            "bench",
            "--grid",
            "400",
            "--trials",
            "1",
            "--b",
            "10",
            "--seed",
            "4",
            "--output",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    let p = &timing["points"][0];
    assert_eq!(p["n"].as_u64(), Some(400));
    assert!(p["speedup"].as_f64().unwrap() > 0.0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 1);
    assert_eq!(report["points"][0]["theta"].as_array().unwrap().len(), 4);
}

#[test]
fn bench_grid_times_grow_with_n_and_closed_form_dominates() {
    let _serial = timing_lock();
    // millisecond-scale wall-clock can still catch a scheduler blip from
    // outside the test process, so allow one retry of the whole run
    let mut last_err = String::new();
    for attempt in 0..2 {
        match bench_grid_once(attempt) {
            Ok(()) => return,
            Err(e) => last_err = e,
        }
    }
    panic!("{last_err}");
}

fn bench_grid_once(attempt: u64) -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = peee_bin()
        .args([
            "bench",
            "--grid",
            "1000,5000,10000",
            "--trials",
            "5",
            "--b",
            "20",
            "--seed",
            &(6 + attempt).to_string(),
            "--output",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    let points = timing["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    for pair in points.windows(2) {
        let (c0, c1) = (
            pair[0]["closed_form_mean"].as_f64().unwrap(),
            pair[1]["closed_form_mean"].as_f64().unwrap(),
        );
        if c1 <= c0 {
            return Err(format!("closed-form times not increasing in n: {c0} -> {c1}"));
        }
        let (b0, b1) = (
            pair[0]["bootstrap_mean"].as_f64().unwrap(),
            pair[1]["bootstrap_mean"].as_f64().unwrap(),
        );
        if b1 <= b0 {
            return Err(format!("bootstrap times not increasing in n: {b0} -> {b1}"));
        }
    }
    for p in points {
        let speedup = p["speedup"].as_f64().unwrap();
        assert!(speedup >= 10.0, "n={}: speedup {speedup:.1}x", p["n"]);
    }
    Ok(())
}
