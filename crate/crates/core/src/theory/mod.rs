//! Closed-form oracles and bound evaluators: the sequential/joint
//! equivalence machinery, partially sketched least-squares deviations,
//! regression error scaling, tangent-kernel quantities, and the
//! Gaussian-mixture analysis of the diagonal penalties.

pub mod gmm;
pub mod ntk;
pub mod regression;
pub mod sketch;

pub use gmm::{
    failure_instance_means, failure_sigma_search, gmm_dense_solve, gmm_ewc_solution,
    gmm_l2_solution, gmm_lambda_sweep, gmm_population_grad, gmm_population_loss, gmm_risk,
    gmm_task_solution, hypercube_mean_pair, log_grid, GmmMethod, GmmSolution, LambdaSweep,
};
pub use ntk::{ntk_complexity, ntk_risk_bound_rhs, rsj_ntk_two_task_run, NtkExperimentReport};
pub use regression::{
    multitask_accumulation, paired_errors_at, regression_scaling_check, AccumulationRow,
    RegressionPoint,
};
pub use sketch::{
    partially_sketched_gd, plain_gd_iterates, sup_deviation_per_sketch_size,
    synthetic_sketch_instance, theorem1_check, SketchDeviationReport, SketchInstance,
};
