//! Gaussian-mixture lambda sweeps: the hypercube instance where tuned
//! diagonal penalties reach the optimal direction, and the failure
//! instance where they stay bounded away from it.
//!
//! Table conventions: `task_index` is the grid index, `lambda` the grid
//! value, `value` the averaged two-task risk.

use rsj_core::theory::{
    failure_instance_means, failure_sigma_search, gmm_lambda_sweep, hypercube_mean_pair,
    GmmMethod,
};

use crate::config::ExperimentConfig;
use crate::dataio::results::ResultRow;
use crate::error::Result;

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let hash = cfg.hash();
    let grid = cfg.lambda_grid();
    let mut out = Vec::new();

    // hypercube instance with nonnegative inner product (d/4 sign flips
    // keeps rho = 1 - 2 flips / d well above zero)
    let (mu_a, mu_b) = hypercube_mean_pair(cfg.gmm_dim, cfg.gmm_dim / 4);
    for method in [GmmMethod::Ewc, GmmMethod::L2] {
        let sweep =
            gmm_lambda_sweep(method, &mu_a.view(), &mu_b.view(), cfg.gmm_sigma, &grid, 200)?;
        let label = match method {
            GmmMethod::Ewc => "ewc",
            _ => "l2",
        };
        for (i, (lam, risk)) in sweep.grid.iter().enumerate() {
            out.push(ResultRow {
                experiment: "gmm-hypercube".to_string(),
                config_hash: hash.clone(),
                task_index: i,
                method: label.to_string(),
                s: 0,
                lambda: *lam,
                seed: cfg.seed,
                value: *risk,
                memory_floats: 0,
                wall_time_s: 0.0,
            });
        }
        println!(
            "# hypercube {label}: min risk {:.6e} at lambda {:.4e}, optimal {:.6e}, ratio {:.6}",
            sweep.min_risk, sweep.best_lambda, sweep.risk_at_optimal, sweep.ratio
        );
    }

    // failure instance at the documented sigma search
    let found = failure_sigma_search(&[0.2, 0.1, 0.05, 0.02], &grid, 1.5)?;
    match found {
        Some((sigma, r_ewc, r_l2)) => println!(
            "# failure instance: sigma {sigma}, grid ratios ewc {r_ewc:.4e}, l2 {r_l2:.4e}"
        ),
        None => println!("# failure instance: no sigma candidate cleared the 1.5 ratio"),
    }
    let sigma = found.map(|(s, _, _)| s).unwrap_or(0.02);
    let (fa, fb) = failure_instance_means();
    for method in [GmmMethod::Ewc, GmmMethod::L2] {
        let sweep = gmm_lambda_sweep(method, &fa.view(), &fb.view(), sigma, &grid, 0)?;
        let label = match method {
            GmmMethod::Ewc => "ewc",
            _ => "l2",
        };
        for (i, (lam, risk)) in sweep.grid.iter().enumerate() {
            out.push(ResultRow {
                experiment: "gmm-failure".to_string(),
                config_hash: hash.clone(),
                task_index: i,
                method: label.to_string(),
                s: 0,
                lambda: *lam,
                seed: cfg.seed,
                value: *risk,
                memory_floats: 0,
                wall_time_s: 0.0,
            });
        }
        println!(
            "# failure {label}: min grid risk {:.6e}, optimal {:.6e}, ratio {:.4e}",
            sweep.min_risk, sweep.risk_at_optimal, sweep.ratio
        );
    }
    Ok(out)
}
