//! The pixel-permutation benchmark: task 0 is plain MNIST, later tasks
//! reorder the pixels with one fixed random permutation each.

use rsj_core::models::{Dataset, Model};
use rsj_core::regularizers::Variant;
use rsj_core::rng::{derive, derive2, streams};
use rsj_core::tasks::{permuted_task, PermutationSpec};
use rsj_core::trainer::TaskProvider;

use crate::config::{parse_methods, ExperimentConfig, MethodSpec};
use crate::dataio::mnist::{load_mnist_test, load_mnist_train, resolve_data_dir, subsample};
use crate::dataio::results::ResultRow;
use crate::error::Result;
use crate::experiments::driver::{
    run_linear_sequence_multi, run_network_sequence_multi, select_lambda, DriverConfig,
    MethodPlan,
};

pub const DEFAULT_METHODS: [&str; 5] = ["all-data", "ewc", "l2", "rsj-100", "rsj-400"];

fn permutations(tasks: usize, dim: usize, seed: u64) -> Vec<PermutationSpec> {
    (0..tasks)
        .map(|t| {
            if t == 0 {
                PermutationSpec::identity(dim)
            } else {
                PermutationSpec::random(dim, derive2(seed, streams::PERMUTATION, t as u64))
            }
        })
        .collect()
}

pub fn build_model(cfg: &ExperimentConfig, input_dim: usize) -> Result<Model> {
    match cfg.model.as_str() {
        "random-features" => Ok(Model::random_relu_features(
            cfg.features,
            input_dim,
            10,
            derive(cfg.seed, streams::INIT),
        )),
        "two-layer" => Ok(Model::two_layer_experimental(input_dim, 500, 10)),
        other => Err(crate::error::CliError::Config(format!(
            "unknown model '{other}' (expected random-features or two-layer)"
        ))),
    }
}

/// Resolves each method's penalty strength: 1 for full/sketch, the
/// configured (or swept) value for ewc/l2.
pub fn resolve_lambdas(
    cfg: &ExperimentConfig,
    model: &Model,
    task0: &Dataset,
    task1: Option<&Dataset>,
    methods: &[MethodSpec],
) -> Result<Vec<MethodPlan>> {
    let mut plans = Vec::with_capacity(methods.len());
    for &spec in methods {
        let lambda = match spec {
            MethodSpec::AllData => 0.0,
            MethodSpec::Penalty(Variant::Full) | MethodSpec::Penalty(Variant::Sketch(_)) => 1.0,
            MethodSpec::Penalty(v @ (Variant::EwcDiag | Variant::L2)) => match cfg.lambda {
                Some(l) => l,
                None => match task1 {
                    Some(t1) => {
                        let l = select_lambda(model, task0, t1, v, cfg.seed, cfg.max_iters)?;
                        eprintln!("# lambda sweep picked {l:.3e} for {}", v.label());
                        l
                    }
                    None => 1.0,
                },
            },
        };
        plans.push(MethodPlan { spec, lambda });
    }
    Ok(plans)
}

struct PermutedProvider {
    train: Dataset,
    eval: Dataset,
    perms: Vec<PermutationSpec>,
}

impl TaskProvider for PermutedProvider {
    fn len(&self) -> usize {
        self.perms.len()
    }
    fn train(&self, idx: usize) -> std::borrow::Cow<'_, Dataset> {
        std::borrow::Cow::Owned(permuted_task(&self.train, &self.perms[idx]).expect("permute"))
    }
    fn eval(&self, idx: usize) -> std::borrow::Cow<'_, Dataset> {
        std::borrow::Cow::Owned(permuted_task(&self.eval, &self.perms[idx]).expect("permute"))
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let dir = resolve_data_dir(cfg.data_dir.as_deref())?;
    let train_full = load_mnist_train(&dir)?;
    let test_full = load_mnist_test(&dir)?;
    let train = subsample(&train_full, cfg.subsample, cfg.seed)?;
    drop(train_full);
    let eval = subsample(&test_full, cfg.eval_subsample, derive(cfg.seed, 50))?;
    drop(test_full);

    let labels: Vec<String> = if cfg.methods.is_empty() {
        DEFAULT_METHODS.iter().map(|s| s.to_string()).collect()
    } else {
        cfg.methods.clone()
    };
    let methods = parse_methods(&labels, None)?;
    let perms = permutations(cfg.tasks, train.input_dim(), cfg.seed);
    let model = build_model(cfg, train.input_dim())?;

    let drv = DriverConfig {
        experiment: "permuted".to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        deterministic: cfg.deterministic,
        group_scales: cfg.group_scales.iter().map(|(k, v)| (k.clone(), *v)).collect(),
    };

    if model.is_linear_in_params() {
        let task1 = (cfg.tasks > 1).then(|| permuted_task(&train, &perms[1])).transpose()?;
        let plans = resolve_lambdas(cfg, &model, &train, task1.as_ref(), &methods)?;
        drop(task1);
        let mut task_of = |t: usize| -> Result<(Dataset, Dataset)> {
            Ok((permuted_task(&train, &perms[t])?, permuted_task(&eval, &perms[t])?))
        };
        run_linear_sequence_multi(&model, cfg.tasks, &mut task_of, plans, &drv)
    } else {
        let provider = PermutedProvider { train: train.clone(), eval, perms };
        let task1 = (cfg.tasks > 1).then(|| provider.train(1).into_owned());
        // lambda sweep uses the linear machinery only when applicable;
        // networks fall back to the configured value or 1
        let plans: Vec<MethodPlan> = methods
            .iter()
            .map(|&spec| MethodPlan {
                spec,
                lambda: match spec {
                    MethodSpec::AllData => 0.0,
                    MethodSpec::Penalty(Variant::EwcDiag | Variant::L2) => {
                        cfg.lambda.unwrap_or(1.0)
                    }
                    _ => 1.0,
                },
            })
            .collect();
        drop(task1);
        run_network_sequence_multi(&model, &provider, plans, cfg.batch.max(256), &drv)
    }
}
