use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rsj_cli::config::ExperimentConfig;
use rsj_cli::dataio::results::{write_results, OutputFormat, ResultRow};
use rsj_cli::error::CliError;
use rsj_cli::experiments;

/// Continual-learning experiments with approximate-Jacobian penalties.
#[derive(Parser)]
#[command(name = "rsj", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sequential learning on pixel-permuted digit tasks.
    Permuted(MnistArgs),
    /// Sequential learning on class-incremental digit pairs.
    Incremental(MnistArgs),
    /// Gaussian regression error-scaling simulations.
    RegressionSim(RegressionArgs),
    /// Gaussian-mixture lambda sweeps (optimality and failure instances).
    Gmm(GmmArgs),
    /// Run the theory-verification check suite.
    VerifyTheory(VerifyArgs),
    /// Print penalty memory costs for a model/task schedule.
    MemoryReport(MemoryArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Config file (TOML); CLI flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write result rows here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv or json.
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Zero wall-time fields so outputs are byte-identical across runs.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct MnistArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding the MNIST IDX files (or set RSJ_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Number of permutation tasks.
    #[arg(long)]
    tasks: Option<usize>,
    /// Class groups for incremental runs, e.g. "0,1;2,3".
    #[arg(long)]
    pairs: Option<String>,
    /// Comma-separated methods: all-data, full, ewc, l2, rsj-<s>, rsj.
    #[arg(long)]
    methods: Vec<String>,
    /// Sketch size for a bare "rsj" method.
    #[arg(long)]
    s: Option<usize>,
    /// Penalty strength for ewc/l2 (skips the validation sweep).
    #[arg(long)]
    lambda: Option<f64>,
    /// Model: random-features or two-layer.
    #[arg(long)]
    model: Option<String>,
    /// Random-feature count.
    #[arg(long)]
    features: Option<usize>,
    /// Training subsample size (0 = all examples).
    #[arg(long)]
    subsample: Option<usize>,
    /// Per-task evaluation subsample (0 = full test set).
    #[arg(long)]
    eval_subsample: Option<usize>,
    /// Use the full dataset (unsets both subsamples).
    #[arg(long)]
    full: bool,
    /// Gradient-descent iteration cap per task.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Mini-batch size for network models (0 = full batch).
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args)]
struct RegressionArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input dimension d.
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated per-task sample sizes.
    #[arg(long)]
    n_grid: Option<String>,
    /// Comma-separated sketch sizes.
    #[arg(long)]
    s_grid: Option<String>,
    /// Label noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of seeds to average.
    #[arg(long)]
    seeds: Option<usize>,
    /// Sequence length for the accumulation study.
    #[arg(long)]
    tasks: Option<usize>,
}

#[derive(Args)]
struct GmmArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Hypercube dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Within-class deviation for the hypercube instance.
    #[arg(long)]
    sigma: Option<f64>,
    /// Lambda grid bounds and size.
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_points: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Run a single named check (see the README for the list).
    #[arg(long)]
    only: Option<String>,
    /// Debug hook multiplying every bound; 0 must fail everything.
    #[arg(long, hide = true, default_value_t = 1.0)]
    debug_scale_bounds: f64,
}

#[derive(Args)]
struct MemoryArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameter count p.
    #[arg(long, default_value_t = 47_040)]
    p: u64,
    /// Number of tasks K.
    #[arg(long, default_value_t = 10)]
    tasks: u64,
    /// Stored Jacobian rows per task for the full variant.
    #[arg(long, default_value_t = 60_000)]
    n: u64,
    /// Sketch sizes to tabulate.
    #[arg(long, value_delimiter = ',', default_values_t = [50u64, 100, 400, 800])]
    s: Vec<u64>,
}

fn base_config(common: &CommonArgs, experiment: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = experiment.to_string();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(format) = common.format {
        cfg.format = format;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn apply_mnist_args(cfg: &mut ExperimentConfig, args: &MnistArgs) {
    if let Some(d) = &args.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(t) = args.tasks {
        cfg.tasks = t;
    }
    if let Some(p) = &args.pairs {
        cfg.pairs = Some(p.clone());
    }
    if !args.methods.is_empty() {
        // expand a bare "rsj" with --s here so the resolved config is explicit
        cfg.methods = args
            .methods
            .iter()
            .flat_map(|m| m.split(','))
            .map(|m| m.trim())
            .filter(|m| !m.is_empty())
            .map(|m| {
                if m == "rsj" {
                    match args.s {
                        Some(s) => format!("rsj-{s}"),
                        None => m.to_string(),
                    }
                } else {
                    m.to_string()
                }
            })
            .collect();
    }
    if let Some(l) = args.lambda {
        cfg.lambda = Some(l);
    }
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(f) = args.features {
        cfg.features = f;
    }
    if let Some(s) = args.subsample {
        cfg.subsample = s;
    }
    if let Some(e) = args.eval_subsample {
        cfg.eval_subsample = e;
    }
    if args.full {
        cfg.subsample = 0;
        cfg.eval_subsample = 0;
    }
    if let Some(i) = args.max_iters {
        cfg.max_iters = i;
    }
    if let Some(b) = args.batch {
        cfg.batch = b;
    }
}

fn parse_grid(spec: &str) -> Result<Vec<usize>, CliError> {
    spec.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad grid entry '{v}'")))
        })
        .collect()
}

fn print_config(cfg: &ExperimentConfig) {
    println!("# resolved config (hash {}):", cfg.hash());
    for line in cfg.to_toml().lines() {
        println!("#   {line}");
    }
}

fn emit(rows: &[ResultRow], cfg: &ExperimentConfig) -> Result<(), CliError> {
    if let Some(out) = &cfg.out {
        write_results(rows, out, cfg.format)?;
        println!("# wrote {} rows to {}", rows.len(), out.display());
    } else {
        print!("{}", rsj_cli::dataio::results::results_to_csv(rows));
    }
    Ok(())
}

fn run() -> Result<bool, CliError> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Permuted(args) => {
            let mut cfg = base_config(&args.common, "permuted")?;
            apply_mnist_args(&mut cfg, &args);
            print_config(&cfg);
            let rows = experiments::permuted::run(&cfg)?;
            emit(&rows, &cfg)?;
            Ok(true)
        }
        Cmd::Incremental(args) => {
            let mut cfg = base_config(&args.common, "incremental")?;
            apply_mnist_args(&mut cfg, &args);
            print_config(&cfg);
            let rows = experiments::incremental::run(&cfg)?;
            emit(&rows, &cfg)?;
            Ok(true)
        }
        Cmd::RegressionSim(args) => {
            let mut cfg = base_config(&args.common, "regression-sim")?;
            if let Some(d) = args.dim {
                cfg.dim = d;
            }
            if let Some(g) = &args.n_grid {
                cfg.n_grid = parse_grid(g)?;
            }
            if let Some(g) = &args.s_grid {
                cfg.s_grid = parse_grid(g)?;
            }
            if let Some(s) = args.sigma {
                cfg.sigma = s;
            }
            if let Some(k) = args.seeds {
                cfg.num_seeds = k;
            }
            if let Some(t) = args.tasks {
                cfg.sequence_tasks = t;
            }
            print_config(&cfg);
            let rows = experiments::regression::run(&cfg)?;
            emit(&rows, &cfg)?;
            Ok(true)
        }
        Cmd::Gmm(args) => {
            let mut cfg = base_config(&args.common, "gmm")?;
            if let Some(d) = args.dim {
                cfg.gmm_dim = d;
            }
            if let Some(s) = args.sigma {
                cfg.gmm_sigma = s;
            }
            if let Some(v) = args.lambda_min {
                cfg.lambda_min = v;
            }
            if let Some(v) = args.lambda_max {
                cfg.lambda_max = v;
            }
            if let Some(v) = args.lambda_points {
                cfg.lambda_points = v;
            }
            print_config(&cfg);
            let rows = experiments::gmm::run(&cfg)?;
            emit(&rows, &cfg)?;
            Ok(true)
        }
        Cmd::VerifyTheory(args) => {
            let mut cfg = base_config(&args.common, "verify-theory")?;
            if let Some(only) = &args.only {
                cfg.only = Some(only.clone());
            }
            cfg.debug_scale_bounds = args.debug_scale_bounds;
            print_config(&cfg);
            experiments::verify::run(&cfg)
        }
        Cmd::MemoryReport(args) => {
            let cfg = base_config(&args.common, "memory-report")?;
            print_config(&cfg);
            let params = experiments::memory::MemoryParams {
                p: args.p,
                tasks: args.tasks,
                n: args.n,
                sketch_sizes: args.s.clone(),
            };
            let rows = experiments::memory::run(&cfg, &params)?;
            if cfg.out.is_some() {
                emit(&rows, &cfg)?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        // a completed run with failed checks
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
