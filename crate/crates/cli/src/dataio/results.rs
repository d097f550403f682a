//! Result tables: one row per (task, method, seed) measurement, written as
//! CSV (fixed header order) or JSON, with all floats at 6 significant
//! digits and rows sorted by (task_index, method, seed).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RESULT_HEADER: &str =
    "experiment,config_hash,task_index,method,s,lambda,seed,value,memory_floats,wall_time_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub config_hash: String,
    pub task_index: usize,
    pub method: String,
    /// Sketch size; 0 when not applicable.
    pub s: u64,
    pub lambda: f64,
    pub seed: u64,
    /// Pooled accuracy, risk, or error, depending on the experiment.
    pub value: f64,
    pub memory_floats: u64,
    /// Zeroed under `--deterministic` so outputs are byte-stable.
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format '{other}', expected csv or json")),
        }
    }
}

/// `%.6g`-style formatting: 6 significant digits, positional notation for
/// moderate exponents, `e` notation otherwise, trailing zeros trimmed.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let trimmed = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        trimmed
    } else {
        let s = format!("{x:.5e}");
        // normalize "1.23000e5" -> "1.23e5"
        match s.split_once('e') {
            Some((mant, e)) => {
                let mant = mant.trim_end_matches('0').trim_end_matches('.');
                format!("{mant}e{e}")
            }
            None => s,
        }
    }
}

/// Rounds to 6 significant digits (used for JSON output parity with CSV).
pub fn round_g6(x: f64) -> f64 {
    fmt_g6(x).parse().unwrap_or(x)
}

fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.task_index
            .cmp(&b.task_index)
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| a.seed.cmp(&b.seed))
    });
}

pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut out = String::new();
    out.push_str(RESULT_HEADER);
    out.push('\n');
    for r in &sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.config_hash,
            r.task_index,
            r.method,
            r.s,
            fmt_g6(r.lambda),
            r.seed,
            fmt_g6(r.value),
            r.memory_floats,
            fmt_g6(r.wall_time_s)
        )
        .unwrap();
    }
    out
}

pub fn results_to_json(rows: &[ResultRow]) -> String {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    for r in &mut sorted {
        r.lambda = round_g6(r.lambda);
        r.value = round_g6(r.value);
        r.wall_time_s = round_g6(r.wall_time_s);
    }
    serde_json::to_string_pretty(&sorted).expect("result rows serialize")
}

/// Writes the table in the requested format ([`RESULT_HEADER`] order for
/// CSV). Rows must be nonempty.
pub fn write_results(rows: &[ResultRow], path: &Path, format: OutputFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(CliError::Config("refusing to write an empty result table".to_string()));
    }
    let body = match format {
        OutputFormat::Csv => results_to_csv(rows),
        OutputFormat::Json => results_to_json(rows),
    };
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Reads a CSV table written by [`write_results`].
pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULT_HEADER => {}
        other => {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                message: format!("unexpected header {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                message: format!("line {}: expected 10 fields, found {}", i + 2, fields.len()),
            });
        }
        let parse_err = |what: &str| CliError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: bad {what}", i + 2),
        };
        rows.push(ResultRow {
            experiment: fields[0].to_string(),
            config_hash: fields[1].to_string(),
            task_index: fields[2].parse().map_err(|_| parse_err("task_index"))?,
            method: fields[3].to_string(),
            s: fields[4].parse().map_err(|_| parse_err("s"))?,
            lambda: fields[5].parse().map_err(|_| parse_err("lambda"))?,
            seed: fields[6].parse().map_err(|_| parse_err("seed"))?,
            value: fields[7].parse().map_err(|_| parse_err("value"))?,
            memory_floats: fields[8].parse().map_err(|_| parse_err("memory_floats"))?,
            wall_time_s: fields[9].parse().map_err(|_| parse_err("wall_time_s"))?,
        });
    }
    Ok(rows)
}

/// One line of the theory-verification report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryReportRow {
    pub check: String,
    pub pass: bool,
    pub measured: f64,
    pub bound: f64,
    pub details: String,
    pub elapsed_s: f64,
}

pub fn write_theory_report(
    rows: &[TheoryReportRow],
    path: &Path,
    format: OutputFormat,
) -> Result<()> {
    let body = match format {
        OutputFormat::Json => serde_json::to_string_pretty(rows).expect("report serializes"),
        OutputFormat::Csv => {
            let mut out = String::from("check,pass,measured,bound,elapsed_s,details\n");
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},\"{}\"",
                    r.check,
                    r.pass,
                    fmt_g6(r.measured),
                    fmt_g6(r.bound),
                    fmt_g6(r.elapsed_s),
                    r.details.replace('"', "'")
                )
                .unwrap();
            }
            out
        }
    };
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}
