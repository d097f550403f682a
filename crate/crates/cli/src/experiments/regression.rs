//! Gaussian-regression simulations: two-task error scaling in `n` and `s`,
//! and error accumulation over longer task sequences.
//!
//! Table conventions: `task_index` carries the sample size `n` for
//! two-task rows and the task count for sequence rows; `value` is the
//! parameter-space error (or gap) named by `method`.

use rsj_core::rng::derive;
use rsj_core::stats::loglog_slope;
use rsj_core::theory::{multitask_accumulation, regression_scaling_check};

use crate::config::ExperimentConfig;
use crate::dataio::results::ResultRow;
use crate::error::Result;

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let hash = cfg.hash();
    let seeds: Vec<u64> = (0..cfg.num_seeds as u64).map(|i| derive(cfg.seed, 70 + i)).collect();
    let rows = regression_scaling_check(
        cfg.dim,
        &cfg.n_grid,
        &cfg.s_grid,
        1.0,
        1.0,
        cfg.sigma,
        &seeds,
    )?;
    let mut out = Vec::new();
    let mk = |method: String, s: u64, task_index: usize, seed: u64, value: f64| ResultRow {
        experiment: "regression-sim".to_string(),
        config_hash: hash.clone(),
        task_index,
        method,
        s,
        lambda: 1.0,
        seed,
        value,
        memory_floats: 0,
        wall_time_s: 0.0,
    };
    for r in &rows {
        match r.s {
            None => out.push(mk("joint".to_string(), 0, r.n, r.seed, r.joint_err)),
            Some(s) => {
                out.push(mk(format!("rsj-{s}"), s as u64, r.n, r.seed, r.rsj_err.unwrap()));
                out.push(mk(
                    format!("rsj-dev-{s}"),
                    s as u64,
                    r.n,
                    r.seed,
                    r.sketch_dev.unwrap(),
                ));
            }
        }
    }

    // slope summaries on the seed-averaged curves
    let mut ns = Vec::new();
    let mut joint_means = Vec::new();
    for &n in &cfg.n_grid {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.n == n && r.s.is_none())
            .map(|r| r.joint_err)
            .collect();
        if !vals.is_empty() {
            ns.push(n as f64);
            joint_means.push(rsj_core::stats::mean(&vals));
        }
    }
    if ns.len() >= 2 {
        println!("# joint error slope vs n: {:.3}", loglog_slope(&ns, &joint_means));
    }
    let mut ss = Vec::new();
    let mut dev_means = Vec::new();
    for &s in &cfg.s_grid {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.s == Some(s))
            .map(|r| r.sketch_dev.unwrap())
            .collect();
        if !vals.is_empty() {
            ss.push(s as f64);
            dev_means.push(rsj_core::stats::mean(&vals));
        }
    }
    if ss.len() >= 2 {
        println!("# sketch deviation slope vs s: {:.3}", loglog_slope(&ss, &dev_means));
    }

    // multi-task accumulation: the gap to the joint baseline per task count
    let n_seq = cfg.n_grid.first().copied().unwrap_or(200).max(10 * cfg.dim);
    let s_seq = cfg.s_grid.first().copied().unwrap_or(cfg.dim);
    let acc = multitask_accumulation(cfg.dim, n_seq, s_seq, cfg.sequence_tasks, cfg.sigma, &seeds)?;
    for row in &acc {
        out.push(mk("seq-rsj".to_string(), s_seq as u64, row.tasks, cfg.seed, row.rsj_err));
        out.push(mk("seq-joint".to_string(), 0, row.tasks, cfg.seed, row.joint_err));
        out.push(mk("seq-gap".to_string(), s_seq as u64, row.tasks, cfg.seed, row.gap));
    }
    println!(
        "# accumulation gaps per task count: {:?}",
        acc.iter().map(|r| (r.tasks, r.gap)).collect::<Vec<_>>()
    );
    Ok(out)
}
