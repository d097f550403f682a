//! Acceptance suite: one test per quantitative criterion, each printing a
//! PASS/FAIL line with the measured quantity and its bound.
//!
//! Criteria 1-10 and 12 run at fixed desk-scale instances through the
//! verification checks in `rsj_core::verify`. Criterion 11 needs the real
//! MNIST IDX files and is `#[ignore]`d by default; point `RSJ_DATA_DIR` at
//! them and run `cargo test -p rsj-cli --test acceptance -- --ignored` to
//! include it.

use std::collections::HashMap;

use rsj_core::verify::{run_check, CheckOptions, CheckReport};

fn run_criterion(number: usize, name: &str) -> CheckReport {
    let opts = CheckOptions::default();
    let report = run_check(name, &opts)
        .unwrap_or_else(|| panic!("unknown check {name}"))
        .unwrap_or_else(|e| panic!("criterion {number} ({name}) errored: {e}"));
    println!("criterion {number:02}: {}", report.summary_line());
    report
}

#[test]
fn criterion_01_sequential_joint_equivalence_is_exact() {
    // linear model, two tasks, full-Jacobian penalty at lambda = 1: the
    // sequential iterates match joint training to 1e-8 relative at every
    // one of the 500 steps
    let report = run_criterion(1, "prop1");
    assert!(report.pass, "{}", report.summary_line());
    assert!(report.bound <= 1e-8);
}

#[test]
fn criterion_02_deviation_bound_monte_carlo() {
    // n = 200, p = 50, effective rank 10, s = 40, 200 sketch draws at the
    // largest t satisfying the iteration condition
    let report = run_criterion(2, "thm1-part1");
    assert!(report.pass, "{}", report.summary_line());
    assert!(report.details.contains("condition true"), "{}", report.details);
}

#[test]
fn criterion_03_deviation_scaling_in_sketch_size() {
    // rank-10 instance, s in {20, ..., 320}: sup-over-t deviation slope
    // within -0.5 +- 0.15
    let report = run_criterion(3, "thm1-part2");
    assert!(report.pass, "{}", report.summary_line());
    assert!((report.measured + 0.5).abs() <= 0.15);
}

#[test]
fn criterion_04_residual_concentration() {
    // 500 draws of ||J'(I - S'S) z|| against the 8 ||J||_F ||z|| / sqrt(s)
    // level on a 50x30 Gaussian J
    let report = run_criterion(4, "probbound");
    assert!(report.pass, "{}", report.summary_line());
}

#[test]
fn criterion_05_regression_error_scaling() {
    // d = 10, n in {100..6400}, s in {10..640}, 10 seeds: joint slope and
    // sketch-deviation slope within -0.5 +- 0.15; sketched error within 2x
    // of joint at the matched point n = s = 10 d
    let report = run_criterion(5, "scaling51");
    assert!(report.pass, "{}", report.summary_line());
    assert!(report.measured <= 2.0);
}

#[test]
fn criterion_06_hypercube_optimality() {
    // d = 16 hypercube means with nonnegative inner product, sigma = 0.3:
    // tuned EWC and L2 reach ratio <= 1 + 1e-4 and cosine >= 1 - 1e-6
    let report = run_criterion(6, "thm3");
    assert!(report.pass, "{}", report.summary_line());
}

#[test]
fn criterion_07_failure_instance_ratio() {
    // normalized failure means, sigma from the documented search: both
    // penalties stay >= 1.5x the optimal risk over the 41-point grid
    let report = run_criterion(7, "thm4");
    assert!(report.pass, "{}", report.summary_line());
    assert!(report.measured >= 1.5);
}

#[test]
fn criterion_08_closed_forms_match_direct_solves() {
    // 100 random mixture instances, both penalties: closed form vs dense
    // Cholesky solve within 1e-10 relative
    let report = run_criterion(8, "gmm-forms");
    assert!(report.pass, "{}", report.summary_line());
    assert!(report.bound <= 1e-10);
}

#[test]
fn criterion_09_tangent_kernel_gram_consistency() {
    // width 10^4: empirical gradient inner products within 5/sqrt(k) of
    // the analytic Gram entries on 10 unit-norm pairs
    let report = run_criterion(9, "ntk-gram");
    assert!(report.pass, "{}", report.summary_line());
}

#[test]
fn criterion_10_finite_width_risk_bound() {
    // n = 100 per task, width 2*10^4, s = 200: pooled clipped-l1 empirical
    // risk of the sequentially trained net stays under the bound RHS
    let report = run_criterion(10, "thm2-bound");
    assert!(report.pass, "{}", report.summary_line());
}

#[test]
fn criterion_12_memory_accounting_formulas() {
    // p(1+Kn), p(1+Ks), 2p, p on 20 random tuples, exactly
    let report = run_criterion(12, "memory");
    assert!(report.pass, "{}", report.summary_line());
}

/// Criterion 11 needs the real digit data. Runs both benchmarks with
/// `subsample = 20000` and the correspondingly loosened thresholds (3
/// points beyond the full-data ones); set `RSJ_ACCEPT_FULL=1` for the
/// full-data run at the strict thresholds.
#[test]
#[ignore = "needs MNIST IDX files; set RSJ_DATA_DIR and run with -- --ignored"]
fn criterion_11_mnist_qualitative_ordering() {
    use rsj_cli::config::ExperimentConfig;
    use rsj_cli::dataio::mnist::resolve_data_dir;

    let dir = resolve_data_dir(None).expect("RSJ_DATA_DIR must point at the MNIST files");
    let full = std::env::var("RSJ_ACCEPT_FULL").is_ok_and(|v| v == "1");
    let (subsample, slack) = if full { (0, 0.0) } else { (20_000, 0.03) };

    let finals = |rows: &[rsj_cli::dataio::results::ResultRow]| -> HashMap<String, f64> {
        let last = rows.iter().map(|r| r.task_index).max().unwrap();
        rows.iter()
            .filter(|r| r.task_index == last)
            .map(|r| (r.method.clone(), r.value))
            .collect()
    };

    // 5-task incremental digits
    let cfg = ExperimentConfig {
        experiment: "incremental".into(),
        data_dir: Some(dir.clone()),
        subsample,
        methods: vec!["all-data".into(), "ewc".into(), "rsj-100".into(), "rsj-800".into()],
        ..Default::default()
    };
    let rows = rsj_cli::experiments::incremental::run(&cfg).unwrap();
    let acc = finals(&rows);
    println!("criterion 11 (incremental finals): {acc:?}");
    let (all_data, ewc) = (acc["all-data"], acc["ewc"]);
    let (rsj100, rsj800) = (acc["rsj-100"], acc["rsj-800"]);
    assert!(all_data >= rsj800 - 0.02 - slack, "all-data {all_data} vs rsj-800 {rsj800}");
    assert!(rsj800 >= rsj100 - 0.05 - slack, "rsj-800 {rsj800} vs rsj-100 {rsj100}");
    assert!(rsj100 >= ewc + 0.20 - slack, "rsj-100 {rsj100} vs ewc {ewc}");

    // 10-task permuted digits
    let cfg = ExperimentConfig {
        experiment: "permuted".into(),
        data_dir: Some(dir),
        subsample,
        tasks: 10,
        methods: vec![
            "all-data".into(),
            "ewc".into(),
            "l2".into(),
            "rsj-100".into(),
            "rsj-400".into(),
        ],
        ..Default::default()
    };
    let rows = rsj_cli::experiments::permuted::run(&cfg).unwrap();
    let acc = finals(&rows);
    println!("criterion 11 (permuted finals): {acc:?}");
    let all_data = acc["all-data"];
    assert!(acc["rsj-400"] >= acc["ewc"] - 0.02 - slack, "rsj-400 vs ewc");
    for (method, &value) in &acc {
        assert!(
            all_data >= value - slack,
            "all-data {all_data} below {method} {value}"
        );
    }
    println!("criterion 11: PASS");
}
