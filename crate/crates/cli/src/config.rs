//! Experiment configuration: one flat, human-editable TOML document whose
//! resolved form is printed (and hashed) before every run. CLI flags
//! override file values; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::results::OutputFormat;
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Subcommand this config drives.
    pub experiment: String,
    pub seed: u64,
    /// Zeroes wall-time fields so repeated runs are byte-identical.
    pub deterministic: bool,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,

    /// Method labels: `all-data`, `full`, `ewc`, `l2`, `rsj-<s>`.
    pub methods: Vec<String>,
    /// Penalty strength for `ewc`/`l2`; when absent a small validation
    /// sweep picks it. `full`/`rsj` always use 1.
    pub lambda: Option<f64>,
    /// Per-parameter-group penalty multipliers.
    pub group_scales: BTreeMap<String, f64>,

    /// Number of permutation tasks.
    pub tasks: usize,
    /// Class groups for the incremental benchmark, e.g. "0,1;2,3".
    pub pairs: Option<String>,
    /// `random-features` or `two-layer`.
    pub model: String,
    /// Random-feature count (default 6*784).
    pub features: usize,
    /// Training-set subsample (0 = full data).
    pub subsample: usize,
    /// Per-task evaluation subsample (0 = full test set).
    pub eval_subsample: usize,

    pub max_iters: usize,
    pub grad_tol: f64,
    /// Mini-batch size for network models (0 = full batch).
    pub batch: usize,

    // regression-sim parameters
    pub dim: usize,
    pub n_grid: Vec<usize>,
    pub s_grid: Vec<usize>,
    pub sigma: f64,
    pub num_seeds: usize,
    pub sequence_tasks: usize,

    // gmm parameters
    pub gmm_dim: usize,
    pub gmm_sigma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,

    // verify-theory parameters
    pub only: Option<String>,
    /// Debug hook: multiplies every bound (0 = negative control).
    pub debug_scale_bounds: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            seed: 0,
            deterministic: false,
            data_dir: None,
            out: None,
            format: OutputFormat::Csv,
            methods: Vec::new(),
            lambda: None,
            group_scales: BTreeMap::new(),
            tasks: 10,
            pairs: None,
            model: "random-features".to_string(),
            features: 6 * 784,
            subsample: 20_000,
            eval_subsample: 2_000,
            max_iters: 400,
            grad_tol: 1e-7,
            batch: 0,
            dim: 10,
            n_grid: vec![100, 200, 400, 800, 1600, 3200, 6400],
            s_grid: vec![10, 20, 40, 80, 160, 320, 640],
            sigma: 0.5,
            num_seeds: 10,
            sequence_tasks: 5,
            gmm_dim: 16,
            gmm_sigma: 0.3,
            lambda_min: 1e-4,
            lambda_max: 1e4,
            lambda_points: 41,
            only: None,
            debug_scale_bounds: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// First 12 hex chars of the SHA-256 of the serialized config; carried
    /// on every result row for traceability. Output routing (`out`,
    /// `format`, `deterministic`) does not change what is computed and is
    /// excluded, so the same experiment hashes identically wherever its
    /// table is written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        canonical.format = OutputFormat::Csv;
        canonical.deterministic = false;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    /// Parses `pairs` ("0,1;2,3;...") into class groups; defaults to the
    /// five digit pairs.
    pub fn class_pairs(&self) -> Result<Vec<Vec<i64>>> {
        match &self.pairs {
            None => Ok((0..5).map(|t| vec![2 * t as i64, 2 * t as i64 + 1]).collect()),
            Some(spec) => {
                let mut out = Vec::new();
                for group in spec.split(';') {
                    let classes: std::result::Result<Vec<i64>, _> = group
                        .split(',')
                        .map(|c| c.trim().parse::<i64>())
                        .collect();
                    let classes = classes
                        .map_err(|_| CliError::Config(format!("bad class group '{group}'")))?;
                    if classes.is_empty() {
                        return Err(CliError::Config("empty class group".to_string()));
                    }
                    out.push(classes);
                }
                Ok(out)
            }
        }
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        rsj_core::theory::log_grid(self.lambda_min, self.lambda_max, self.lambda_points)
    }
}

/// A parsed method label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodSpec {
    AllData,
    Penalty(rsj_core::regularizers::Variant),
}

impl MethodSpec {
    pub fn parse(label: &str) -> Result<Self> {
        use rsj_core::regularizers::Variant;
        match label {
            "all-data" | "alldata" => Ok(MethodSpec::AllData),
            "full" => Ok(MethodSpec::Penalty(Variant::Full)),
            "ewc" => Ok(MethodSpec::Penalty(Variant::EwcDiag)),
            "l2" => Ok(MethodSpec::Penalty(Variant::L2)),
            other => {
                if let Some(s) = other.strip_prefix("rsj-") {
                    let s: usize = s.parse().map_err(|_| {
                        CliError::Config(format!("bad sketch size in method '{other}'"))
                    })?;
                    if s == 0 {
                        return Err(CliError::Config("sketch size must be >= 1".to_string()));
                    }
                    Ok(MethodSpec::Penalty(Variant::Sketch(s)))
                } else {
                    Err(CliError::Config(format!(
                        "unknown method '{other}' (expected all-data, full, ewc, l2, or rsj-<s>)"
                    )))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            MethodSpec::AllData => "all-data".to_string(),
            MethodSpec::Penalty(v) => v.label(),
        }
    }

    pub fn sketch_size(&self) -> u64 {
        match self {
            MethodSpec::Penalty(rsj_core::regularizers::Variant::Sketch(s)) => *s as u64,
            _ => 0,
        }
    }
}

/// Parses a comma-separated method list, applying `--s` to a bare `rsj`.
pub fn parse_methods(labels: &[String], bare_rsj_s: Option<usize>) -> Result<Vec<MethodSpec>> {
    let mut out = Vec::new();
    for label in labels {
        for part in label.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            if part == "rsj" {
                let s = bare_rsj_s.ok_or_else(|| {
                    CliError::Config("method 'rsj' requires --s <size>".to_string())
                })?;
                out.push(MethodSpec::Penalty(rsj_core::regularizers::Variant::Sketch(s)));
            } else {
                out.push(MethodSpec::parse(part)?);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no methods requested".to_string()));
    }
    Ok(out)
}
