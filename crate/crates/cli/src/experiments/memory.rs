//! The `memory-report` subcommand: stored-real counts of each penalty
//! variant for a given model size and task schedule.

use rsj_core::regularizers::{memory_cost, Variant};

use crate::config::ExperimentConfig;
use crate::dataio::results::ResultRow;
use crate::error::Result;

pub struct MemoryParams {
    pub p: u64,
    pub tasks: u64,
    pub n: u64,
    pub sketch_sizes: Vec<u64>,
}

pub fn run(cfg: &ExperimentConfig, params: &MemoryParams) -> Result<Vec<ResultRow>> {
    let hash = cfg.hash();
    let mut rows = Vec::new();
    println!(
        "# memory report: p = {}, tasks = {}, n = {} (reals held by each penalty)",
        params.p, params.tasks, params.n
    );
    let mut emit = |label: String, s: u64, cost: u64| {
        println!("{label:>12}: {cost}");
        rows.push(ResultRow {
            experiment: "memory-report".to_string(),
            config_hash: hash.clone(),
            task_index: params.tasks as usize,
            method: label,
            s,
            lambda: 0.0,
            seed: cfg.seed,
            value: cost as f64,
            memory_floats: cost,
            wall_time_s: 0.0,
        });
    };
    emit("full".to_string(), 0, memory_cost(Variant::Full, params.p, params.tasks, params.n, 0));
    for &s in &params.sketch_sizes {
        emit(
            format!("rsj-{s}"),
            s,
            memory_cost(Variant::Sketch(s as usize), params.p, params.tasks, params.n, s),
        );
    }
    emit("ewc".to_string(), 0, memory_cost(Variant::EwcDiag, params.p, params.tasks, params.n, 0));
    emit("l2".to_string(), 0, memory_cost(Variant::L2, params.p, params.tasks, params.n, 0));
    Ok(rows)
}
