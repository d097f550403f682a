//! The `verify-theory` subcommand: runs the check suite (optionally a
//! single named check), prints one line per check, and reports failure
//! through the exit code.

use rsj_core::verify::{run_check, CheckOptions, CHECK_NAMES};

use crate::config::ExperimentConfig;
use crate::dataio::results::{write_theory_report, TheoryReportRow};
use crate::error::{CliError, Result};

/// Returns true iff every executed check passed.
pub fn run(cfg: &ExperimentConfig) -> Result<bool> {
    let opts = CheckOptions { bound_scale: cfg.debug_scale_bounds, seed: cfg.seed };
    let names: Vec<&str> = match &cfg.only {
        Some(only) => {
            if !CHECK_NAMES.contains(&only.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown check '{only}'; available: {}",
                    CHECK_NAMES.join(", ")
                )));
            }
            vec![only.as_str()]
        }
        None => CHECK_NAMES.to_vec(),
    };
    let mut reports = Vec::with_capacity(names.len());
    let mut all_pass = true;
    for name in names {
        let report = run_check(name, &opts).expect("name validated")?;
        println!("{}", report.summary_line());
        all_pass &= report.pass;
        reports.push(TheoryReportRow {
            check: report.name.to_string(),
            pass: report.pass,
            measured: report.measured,
            bound: report.bound,
            details: report.details,
            elapsed_s: if cfg.deterministic { 0.0 } else { report.elapsed_secs },
        });
    }
    if let Some(out) = &cfg.out {
        write_theory_report(&reports, out, cfg.format)?;
    }
    println!("# verify-theory: {}", if all_pass { "all checks passed" } else { "FAILURES above" });
    Ok(all_pass)
}
