//! Class-incremental digits: task A classifies {0,1}, task B {2,3}, and
//! so on, evaluated single-head over every class seen.

use rsj_core::models::Dataset;
use rsj_core::rng::derive;
use rsj_core::tasks::incremental_split;

use crate::config::{parse_methods, ExperimentConfig};
use crate::dataio::mnist::{load_mnist_test, load_mnist_train, resolve_data_dir, subsample};
use crate::dataio::results::ResultRow;
use crate::error::Result;
use crate::experiments::driver::{run_linear_sequence_multi, DriverConfig};
use crate::experiments::permuted::{build_model, resolve_lambdas};

pub const DEFAULT_METHODS: [&str; 5] = ["all-data", "ewc", "rsj-50", "rsj-100", "rsj-800"];

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let dir = resolve_data_dir(cfg.data_dir.as_deref())?;
    let train_full = load_mnist_train(&dir)?;
    let test_full = load_mnist_test(&dir)?;
    let train = subsample(&train_full, cfg.subsample, cfg.seed)?;
    drop(train_full);

    let pairs = cfg.class_pairs()?;
    let train_tasks = incremental_split(&train, &pairs)?;
    drop(train);
    let test_tasks = incremental_split(&test_full, &pairs)?;
    drop(test_full);
    let eval_tasks: Vec<Dataset> = test_tasks
        .iter()
        .enumerate()
        .map(|(t, d)| subsample(d, cfg.eval_subsample, derive(cfg.seed, 60 + t as u64)))
        .collect::<Result<_>>()?;

    let labels: Vec<String> = if cfg.methods.is_empty() {
        DEFAULT_METHODS.iter().map(|s| s.to_string()).collect()
    } else {
        cfg.methods.clone()
    };
    let methods = parse_methods(&labels, None)?;
    let model = build_model(cfg, train_tasks[0].input_dim())?;
    if !model.is_linear_in_params() {
        return Err(crate::error::CliError::Config(
            "the incremental benchmark currently drives the random-feature model".to_string(),
        ));
    }

    let plans = resolve_lambdas(
        cfg,
        &model,
        &train_tasks[0],
        train_tasks.get(1),
        &methods,
    )?;
    let drv = DriverConfig {
        experiment: "incremental".to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        deterministic: cfg.deterministic,
        group_scales: cfg.group_scales.iter().map(|(k, v)| (k.clone(), *v)).collect(),
    };
    let mut task_of = |t: usize| -> Result<(Dataset, Dataset)> {
        Ok((train_tasks[t].clone(), eval_tasks[t].clone()))
    };
    run_linear_sequence_multi(&model, train_tasks.len(), &mut task_of, plans, &drv)
}
