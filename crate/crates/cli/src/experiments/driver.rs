//! Shared sequential-training driver for the MNIST-style benchmarks.
//!
//! All requested methods advance through the task sequence together so the
//! expensive per-task work (featurization, Gram accumulation, sketch
//! products) happens once per task instead of once per task per method.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView1};
use rsj_core::models::{Dataset, Model, ParamVector};
use rsj_core::regularizers::{JacobianFactor, PenaltyState, StreamingEwcDiag, StreamingSketch, Variant};
use rsj_core::rng::{derive, derive2, streams};
use rsj_core::trainer::{
    build_task_factor, linear_task_summary, run_sequence, train_linear_from_summary,
    BatchMode, LinearTaskSummary, SequenceReport, Stepsize, TaskProvider, TrainConfig,
};

use crate::config::MethodSpec;
use crate::dataio::mnist::subsample;
use crate::dataio::results::ResultRow;
use crate::error::{CliError, Result};

const EVAL_BLOCK: usize = 2048;

pub struct DriverConfig {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub deterministic: bool,
    /// Per-parameter-group penalty multipliers applied to every method.
    pub group_scales: Vec<(String, f64)>,
}

/// Resolved (method, lambda) pairs to run.
pub struct MethodPlan {
    pub spec: MethodSpec,
    pub lambda: f64,
}

struct MethodState {
    plan: MethodPlan,
    penalty: Option<PenaltyState>,
    theta: Option<ParamVector>,
    wall: f64,
}

fn train_config(drv: &DriverConfig, lambda: f64) -> TrainConfig {
    TrainConfig {
        stepsize: Stepsize::Auto,
        max_iters: drv.max_iters,
        lambda,
        grad_tol: drv.grad_tol,
        batch: BatchMode::Full,
        seed: drv.seed,
        init: None,
        record_iterates: false,
    }
}

/// Sketch seed for one (experiment seed, task index) pair, further split by
/// sketch size so several sketch methods in one run stay independent.
fn sketch_seed(seed: u64, task: usize, s: usize) -> u64 {
    derive(derive2(seed, streams::SKETCH, task as u64), s as u64)
}

/// Reals held by a penalty state (anchor plus factors).
fn stored_floats(state: &PenaltyState) -> u64 {
    let p = state.anchor().len() as u64;
    match state.variant() {
        Variant::Full | Variant::Sketch(_) => {
            p + state.factors().iter().map(|f| f.len() as u64).sum::<u64>()
        }
        Variant::EwcDiag => 2 * p,
        Variant::L2 => p,
    }
}

/// Raw reals the all-data baseline retains (features plus targets of every
/// task seen).
fn all_data_floats(examples: usize, input_dim: usize, outputs: usize) -> u64 {
    (examples * (input_dim + outputs)) as u64
}

/// Pooled argmax accuracy of several parameter vectors over the same eval
/// sets, sharing one featurization pass. Ties break toward the smaller
/// class index.
fn pooled_accuracies(
    model: &Model,
    thetas: &[&ParamVector],
    evals: &[&Dataset],
) -> Result<Vec<f64>> {
    let q = model.outputs();
    let m = model.feature_dim().expect("linear model");
    let heads: Vec<Array2<f64>> = thetas
        .iter()
        .map(|t| {
            t.view()
                .into_shape_with_order((q, m))
                .unwrap()
                .to_owned()
        })
        .collect();
    let mut correct = vec![0usize; thetas.len()];
    let mut total = 0usize;
    for data in evals {
        let labels = data.labels().ok_or_else(|| {
            CliError::Config("evaluation dataset is missing labels".to_string())
        })?;
        let x = data.features();
        let mut row = 0;
        while row < x.nrows() {
            let hi = (row + EVAL_BLOCK).min(x.nrows());
            let phi = model.feature_map(&x.slice(s![row..hi, ..]))?;
            for (mi, head) in heads.iter().enumerate() {
                let logits = phi.dot(&head.t());
                for (i, p) in logits.rows().into_iter().enumerate() {
                    let mut best = 0usize;
                    let mut best_v = p[0];
                    for c in 1..q {
                        if p[c] > best_v {
                            best_v = p[c];
                            best = c;
                        }
                    }
                    if best as i64 == labels[row + i] {
                        correct[mi] += 1;
                    }
                }
            }
            total += hi - row;
            row = hi;
        }
    }
    Ok(correct.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Per-task artifacts produced by the single featurization pass.
struct TaskPass {
    summary: LinearTaskSummary,
    factors: Vec<(usize, JacobianFactor)>, // (method index, factor)
}

/// One blocked pass over the task's rows: Gram/targets summary plus every
/// requested Jacobian-approximation factor.
fn featurize_task(
    model: &Model,
    data: &Dataset,
    methods: &[MethodState],
    task_idx: usize,
    seed: u64,
) -> Result<TaskPass> {
    let m = model.feature_dim().expect("linear model");
    let q = model.outputs();
    let mut summary = LinearTaskSummary::zeros(m, q);
    let mut sketches: Vec<(usize, StreamingSketch)> = Vec::new();
    let mut ewc: Option<(usize, StreamingEwcDiag)> = None;
    let mut trivial: Vec<(usize, JacobianFactor)> = Vec::new();
    for (mi, ms) in methods.iter().enumerate() {
        match ms.plan.spec {
            MethodSpec::AllData => {}
            MethodSpec::Penalty(Variant::Sketch(s)) => {
                sketches.push((mi, StreamingSketch::new(s, m, q, sketch_seed(seed, task_idx, s))?));
            }
            MethodSpec::Penalty(Variant::EwcDiag) => {
                ewc = Some((mi, StreamingEwcDiag::new(m, q)));
            }
            MethodSpec::Penalty(Variant::L2) => {
                trivial.push((mi, JacobianFactor::Identity));
            }
            MethodSpec::Penalty(Variant::Full) => {
                // materialized below via the generic path
            }
        }
    }
    let x = data.features();
    let y = data.targets();
    let mut row = 0;
    while row < x.nrows() {
        let hi = (row + EVAL_BLOCK).min(x.nrows());
        let phi = model.feature_map(&x.slice(s![row..hi, ..]))?;
        summary.absorb(&phi.view(), &y.slice(s![row..hi, ..]));
        for (_, sk) in sketches.iter_mut() {
            sk.absorb(&phi.view())?;
        }
        if let Some((_, acc)) = ewc.as_mut() {
            acc.absorb(&phi.view());
        }
        row = hi;
    }
    let mut factors: Vec<(usize, JacobianFactor)> = trivial;
    for (mi, sk) in sketches {
        factors.push((mi, JacobianFactor::Dense(sk.finish())));
    }
    if let Some((mi, acc)) = ewc {
        factors.push((mi, JacobianFactor::Diag(acc.finish())));
    }
    for (mi, ms) in methods.iter().enumerate() {
        if let MethodSpec::Penalty(Variant::Full) = ms.plan.spec {
            let theta = ParamVector::zeros(model.layout());
            factors.push((mi, build_task_factor(model, &theta, data, Variant::Full, 0)?));
        }
    }
    Ok(TaskPass { summary, factors })
}

/// Runs every method through the task sequence, evaluating pooled
/// single-head accuracy over all eval sets seen after each task.
pub fn run_linear_sequence_multi(
    model: &Model,
    num_tasks: usize,
    task_of: &mut dyn FnMut(usize) -> Result<(Dataset, Dataset)>,
    methods: Vec<MethodPlan>,
    drv: &DriverConfig,
) -> Result<Vec<ResultRow>> {
    if !model.is_linear_in_params() {
        return Err(CliError::Config(
            "the shared driver handles linear-in-parameter models; use the network path"
                .to_string(),
        ));
    }
    let mut states: Vec<MethodState> = methods
        .into_iter()
        .map(|plan| MethodState { plan, penalty: None, theta: None, wall: 0.0 })
        .collect();
    let mut all_data = LinearTaskSummary::zeros(
        model.feature_dim().unwrap(),
        model.outputs(),
    );
    let mut evals: Vec<Dataset> = Vec::with_capacity(num_tasks);
    let mut seen_examples = 0usize;
    let mut rows = Vec::new();

    for t in 0..num_tasks {
        let (train, eval) = task_of(t)?;
        let pass = featurize_task(model, &train, &states, t, drv.seed)?;
        seen_examples += train.n();
        drop(train);
        evals.push(eval);

        // advance each method
        for (mi, ms) in states.iter_mut().enumerate() {
            let started = Instant::now();
            match ms.plan.spec {
                // trains below, once the shared summary has been extended
                MethodSpec::AllData => {}
                MethodSpec::Penalty(variant) => {
                    let cfg = train_config(drv, ms.plan.lambda);
                    let (theta, _trace) = match &ms.penalty {
                        None => train_linear_from_summary(model, &pass.summary, None, &cfg)?,
                        Some(state) => train_linear_from_summary(
                            model,
                            &pass.summary,
                            Some((state, ms.plan.lambda)),
                            &cfg,
                        )?,
                    };
                    let factor = pass
                        .factors
                        .iter()
                        .find(|(idx, _)| *idx == mi)
                        .map(|(_, f)| f.clone())
                        .ok_or_else(|| {
                            CliError::Config("missing factor for method".to_string())
                        })?;
                    let next = match ms.penalty.take() {
                        None => {
                            let mut st = PenaltyState::new(variant, theta.clone());
                            for (group, scale) in &drv.group_scales {
                                st.set_group_scale(group, *scale)?;
                            }
                            st.accumulate(factor, theta.clone())?
                        }
                        Some(st) => st.accumulate(factor, theta.clone())?,
                    };
                    ms.penalty = Some(next);
                    ms.theta = Some(theta);
                }
            }
            ms.wall += started.elapsed().as_secs_f64();
        }
        // all-data baseline trains on the summed summaries from scratch
        all_data.add(&pass.summary);
        for ms in states.iter_mut() {
            if ms.plan.spec == MethodSpec::AllData {
                let started = Instant::now();
                let cfg = train_config(drv, 0.0);
                let (theta, _) = train_linear_from_summary(model, &all_data, None, &cfg)?;
                ms.theta = Some(theta);
                ms.wall += started.elapsed().as_secs_f64();
            }
        }

        let thetas: Vec<&ParamVector> = states
            .iter()
            .map(|ms| ms.theta.as_ref().expect("every method trained"))
            .collect();
        let eval_refs: Vec<&Dataset> = evals.iter().collect();
        let accs = pooled_accuracies(model, &thetas, &eval_refs)?;

        for (ms, acc) in states.iter_mut().zip(accs.iter()) {
            let memory = match (&ms.plan.spec, &ms.penalty) {
                (MethodSpec::AllData, _) => {
                    all_data_floats(seen_examples, model.input_dim(), model.outputs())
                }
                (_, Some(state)) => stored_floats(state),
                _ => 0,
            };
            rows.push(ResultRow {
                experiment: drv.experiment.clone(),
                config_hash: drv.config_hash.clone(),
                task_index: t,
                method: ms.plan.spec.label(),
                s: ms.plan.spec.sketch_size(),
                lambda: ms.plan.lambda,
                seed: drv.seed,
                value: *acc,
                memory_floats: memory,
                wall_time_s: if drv.deterministic { 0.0 } else { ms.wall },
            });
        }
    }
    Ok(rows)
}

/// Network-model fallback: runs each method independently through
/// `run_sequence` (mini-batch capable), plus the all-data baseline via
/// joint training on prefixes.
pub fn run_network_sequence_multi(
    model: &Model,
    tasks: &dyn TaskProvider,
    methods: Vec<MethodPlan>,
    batch: usize,
    drv: &DriverConfig,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for plan in methods {
        let started = Instant::now();
        match plan.spec {
            MethodSpec::AllData => {
                let mut prefix: Vec<Dataset> = Vec::new();
                for t in 0..tasks.len() {
                    prefix.push(tasks.train(t).into_owned());
                    let refs: Vec<&Dataset> = prefix.iter().collect();
                    let cfg = TrainConfig {
                        batch: if batch == 0 { BatchMode::Full } else { BatchMode::Mini(batch) },
                        ..train_config(drv, 0.0)
                    };
                    let (theta, _) = rsj_core::trainer::joint_train(model, &refs, &cfg)?;
                    let evals: Vec<Dataset> =
                        (0..=t).map(|i| tasks.eval(i).into_owned()).collect();
                    let eval_refs: Vec<&Dataset> = evals.iter().collect();
                    let acc =
                        rsj_core::trainer::single_head_accuracy(model, &theta, &eval_refs)?;
                    rows.push(ResultRow {
                        experiment: drv.experiment.clone(),
                        config_hash: drv.config_hash.clone(),
                        task_index: t,
                        method: plan.spec.label(),
                        s: 0,
                        lambda: 0.0,
                        seed: drv.seed,
                        value: acc,
                        memory_floats: all_data_floats(
                            prefix.iter().map(|d| d.n()).sum(),
                            model.input_dim(),
                            model.outputs(),
                        ),
                        wall_time_s: if drv.deterministic {
                            0.0
                        } else {
                            started.elapsed().as_secs_f64()
                        },
                    });
                }
            }
            MethodSpec::Penalty(variant) => {
                let cfg = TrainConfig {
                    batch: if batch == 0 { BatchMode::Full } else { BatchMode::Mini(batch) },
                    ..train_config(drv, plan.lambda)
                };
                let report: SequenceReport = run_sequence(model, tasks, variant, &cfg)?;
                for r in &report.rows {
                    rows.push(ResultRow {
                        experiment: drv.experiment.clone(),
                        config_hash: drv.config_hash.clone(),
                        task_index: r.task_index,
                        method: plan.spec.label(),
                        s: plan.spec.sketch_size(),
                        lambda: plan.lambda,
                        seed: drv.seed,
                        value: r.accuracy,
                        memory_floats: r.memory_floats,
                        wall_time_s: if drv.deterministic {
                            0.0
                        } else {
                            started.elapsed().as_secs_f64()
                        },
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Picks the penalty strength for EWC/L2 by a small two-task validation
/// sweep on subsampled data: train task 0, then task 1 under each
/// candidate, and keep the lambda with the best pooled held-out accuracy.
pub fn select_lambda(
    model: &Model,
    task0: &Dataset,
    task1: &Dataset,
    variant: Variant,
    seed: u64,
    max_iters: usize,
) -> Result<f64> {
    let proxy_n = 4000;
    let t0 = subsample(task0, proxy_n, derive(seed, 40))?;
    let t1 = subsample(task1, proxy_n, derive(seed, 41))?;
    let split = |d: &Dataset, tag: u64| -> Result<(Dataset, Dataset)> {
        let n = d.n();
        let held = (n / 10).max(1);
        let mut rng = rsj_core::rng::SplitMix64::new(derive(seed, tag));
        let val_idx = rng.sample_indices(n, held);
        let mut is_val = vec![false; n];
        for &i in &val_idx {
            is_val[i] = true;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| !is_val[i]).collect();
        Ok((d.select(&train_idx)?, d.select(&val_idx)?))
    };
    let (train0, val0) = split(&t0, 42)?;
    let (train1, val1) = split(&t1, 43)?;

    let cfg = TrainConfig { max_iters, grad_tol: 1e-7, seed, ..Default::default() };
    let sum0 = linear_task_summary(model, &train0)?;
    let (theta0, _) = train_linear_from_summary(model, &sum0, None, &cfg)?;
    let factor = build_task_factor(model, &theta0, &train0, variant, derive(seed, 44))?;
    let state = PenaltyState::new(variant, theta0.clone()).accumulate(factor, theta0)?;
    let sum1 = linear_task_summary(model, &train1)?;

    let grid = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4];
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &lambda in &grid {
        let run = TrainConfig { lambda, ..cfg.clone() };
        let (theta, _) = train_linear_from_summary(model, &sum1, Some((&state, lambda)), &run)?;
        let acc =
            rsj_core::trainer::single_head_accuracy(model, &theta, &[&val0, &val1])?;
        if acc > best.0 {
            best = (acc, lambda);
        }
    }
    Ok(best.1)
}

/// Helper shared by tests and experiments to view a head matrix.
pub fn head_matrix(theta: &ParamVector, q: usize, m: usize) -> Array2<f64> {
    let v: ArrayView1<f64> = theta.view();
    v.into_shape_with_order((q, m)).unwrap().to_owned()
}
