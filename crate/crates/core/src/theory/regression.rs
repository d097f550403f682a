//! Error scaling of joint training versus sequential sketched training on
//! pairs (and longer sequences) of Gaussian linear regression tasks.
//!
//! The optimal predictor for tasks drawn with equal probability is the
//! average of the task parameters; joint estimation error decays like
//! `sqrt(d/n)` while the sketch contributes an extra `sqrt(d/s)`-scale
//! deviation from the joint iterates.

use ndarray::Array1;

use crate::error::{invalid, Result};
use crate::models::{Dataset, Model};
use crate::regularizers::{build_approx_jacobian, PenaltyState, Variant};
use crate::rng::{derive, derive2, streams, SplitMix64};
use crate::trainer::{joint_train, train_first_task, train_next_task, TrainConfig};

/// One measured point of the two-task experiment.
#[derive(Clone, Debug)]
pub struct RegressionPoint {
    pub n: usize,
    /// Sketch size; `None` for joint-only rows.
    pub s: Option<usize>,
    pub seed: u64,
    /// `||theta_joint - theta*||` at this `n`.
    pub joint_err: f64,
    /// `||theta_rsj - theta*||` (sketched sequential pipeline).
    pub rsj_err: Option<f64>,
    /// `||theta_rsj - theta_joint||`, the pure sketch-induced deviation.
    pub sketch_dev: Option<f64>,
}

fn unit_vector(d: usize, rng: &mut SplitMix64) -> Array1<f64> {
    let mut v = Array1::from_iter((0..d).map(|_| rng.next_normal()));
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    v
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig { max_iters: 800, grad_tol: 1e-11, lambda: 1.0, seed, ..Default::default() }
}

/// Runs the sequential sketched pipeline on two regression tasks and
/// returns the final parameter.
fn rsj_two_tasks(
    model: &Model,
    task_a: &Dataset,
    task_b: &Dataset,
    s: usize,
    seed: u64,
) -> Result<Array1<f64>> {
    let cfg = train_cfg(seed);
    let (theta_a, _) = train_first_task(model, task_a, &cfg)?;
    let j_a = model.jacobian(&theta_a, &task_a.features().view())?;
    let factor = build_approx_jacobian(Variant::Sketch(s), &j_a.view(), derive(seed, streams::SKETCH))?;
    let state = PenaltyState::new(Variant::Sketch(s), theta_a.clone()).accumulate(factor, theta_a)?;
    let (theta, _) = train_next_task(model, task_b, &state, &cfg)?;
    Ok(theta.values().clone())
}

/// Two-task Gaussian regression sweep: joint error over `n_grid`, and at
/// `n_ref = max(n_grid)` the sketched error over `s_grid`. One pair of
/// ground-truth parameters (with the requested norms) is drawn per seed.
pub fn regression_scaling_check(
    d: usize,
    n_grid: &[usize],
    s_grid: &[usize],
    norm_a: f64,
    norm_b: f64,
    sigma: f64,
    seeds: &[u64],
) -> Result<Vec<RegressionPoint>> {
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(invalid("regression_scaling_check: empty grid"));
    }
    if let Some(&n_min) = n_grid.iter().min() {
        if n_min < 10 * d {
            return Err(invalid("regression_scaling_check requires n >= 10 d on the grid"));
        }
    }
    let model = Model::linear(d, 1);
    let n_ref = *n_grid.iter().max().unwrap();
    let mut out = Vec::new();
    for &seed in seeds {
        let mut rng = SplitMix64::new(derive(seed, streams::DATA));
        let theta_a = unit_vector(d, &mut rng).mapv(|v| v * norm_a);
        let theta_b = unit_vector(d, &mut rng).mapv(|v| v * norm_b);
        let optimal = (&theta_a + &theta_b).mapv(|v| 0.5 * v);
        let joint_at = |n: usize, tag: u64| -> Result<(f64, Array1<f64>)> {
            let da = crate::tasks::gaussian_linear_task(&theta_a, sigma, n, derive2(seed, 10, tag))?;
            let db = crate::tasks::gaussian_linear_task(&theta_b, sigma, n, derive2(seed, 11, tag))?;
            let cfg = train_cfg(seed);
            let (tj, _) = joint_train(&model, &[&da, &db], &cfg)?;
            let diff = tj.values() - &optimal;
            Ok((diff.dot(&diff).sqrt(), tj.values().clone()))
        };
        for (ni, &n) in n_grid.iter().enumerate() {
            let (err, _) = joint_at(n, ni as u64)?;
            out.push(RegressionPoint { n, s: None, seed, joint_err: err, rsj_err: None, sketch_dev: None });
        }
        // sketched runs share one dataset pair at the reference n
        let tag = n_grid.len() as u64;
        let da = crate::tasks::gaussian_linear_task(&theta_a, sigma, n_ref, derive2(seed, 10, tag))?;
        let db = crate::tasks::gaussian_linear_task(&theta_b, sigma, n_ref, derive2(seed, 11, tag))?;
        let cfg = train_cfg(seed);
        let (tj, _) = joint_train(&model, &[&da, &db], &cfg)?;
        let jdiff = tj.values() - &optimal;
        let joint_err = jdiff.dot(&jdiff).sqrt();
        for (si, &s) in s_grid.iter().enumerate() {
            let theta = rsj_two_tasks(&model, &da, &db, s, derive2(seed, 12, si as u64))?;
            let e = &theta - &optimal;
            let dv = &theta - tj.values();
            out.push(RegressionPoint {
                n: n_ref,
                s: Some(s),
                seed,
                joint_err,
                rsj_err: Some(e.dot(&e).sqrt()),
                sketch_dev: Some(dv.dot(&dv).sqrt()),
            });
        }
    }
    Ok(out)
}

/// Joint-vs-sketched comparison at one `(n, s)` point; used for the
/// "sketched error within a factor of joint error" check. Returns the mean
/// (over seeds) of both errors.
pub fn paired_errors_at(
    d: usize,
    n: usize,
    s: usize,
    norm_a: f64,
    norm_b: f64,
    sigma: f64,
    seeds: &[u64],
) -> Result<(f64, f64)> {
    let model = Model::linear(d, 1);
    let mut joint_errs = Vec::with_capacity(seeds.len());
    let mut rsj_errs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = SplitMix64::new(derive(seed, streams::DATA));
        let theta_a = unit_vector(d, &mut rng).mapv(|v| v * norm_a);
        let theta_b = unit_vector(d, &mut rng).mapv(|v| v * norm_b);
        let optimal = (&theta_a + &theta_b).mapv(|v| 0.5 * v);
        let da = crate::tasks::gaussian_linear_task(&theta_a, sigma, n, derive2(seed, 20, 0))?;
        let db = crate::tasks::gaussian_linear_task(&theta_b, sigma, n, derive2(seed, 21, 0))?;
        let cfg = train_cfg(seed);
        let (tj, _) = joint_train(&model, &[&da, &db], &cfg)?;
        let jd = tj.values() - &optimal;
        joint_errs.push(jd.dot(&jd).sqrt());
        let theta = rsj_two_tasks(&model, &da, &db, s, derive2(seed, 22, 0))?;
        let rd = &theta - &optimal;
        rsj_errs.push(rd.dot(&rd).sqrt());
    }
    Ok((crate::stats::mean(&joint_errs), crate::stats::mean(&rsj_errs)))
}

/// Error accumulation over longer task sequences, averaged over seeds: the
/// gap between the sequential sketched estimate and the joint baseline
/// grows as tasks accumulate.
#[derive(Clone, Debug)]
pub struct AccumulationRow {
    /// Number of tasks seen so far (1-based).
    pub tasks: usize,
    pub rsj_err: f64,
    pub joint_err: f64,
    pub gap: f64,
}

/// Off-block feature scale of the accumulation tasks. Each task's inputs
/// concentrate on its own coordinate block (scale 1) and touch the rest at
/// this scale, mimicking the near-orthogonal geometry of permuted-feature
/// tasks; with isotropic inputs the anchored sequential estimate stabilizes
/// instead of accumulating sketch damage.
const OFF_BLOCK_SCALE: f64 = 0.3;

/// Sequential sketched training versus the joint baseline over `num_tasks`
/// block-structured regression tasks (block size `d`, total dimension
/// `num_tasks * d`), errors measured against the per-coordinate weighted
/// optimum of the averaged risk.
pub fn multitask_accumulation(
    d: usize,
    n: usize,
    s: usize,
    num_tasks: usize,
    sigma: f64,
    seeds: &[u64],
) -> Result<Vec<AccumulationRow>> {
    if num_tasks == 0 || seeds.is_empty() {
        return Err(invalid("multitask_accumulation: empty configuration"));
    }
    let total = num_tasks * d;
    let model = Model::linear(total, 1);
    let weight = |task: usize, j: usize| -> f64 {
        if j / d == task {
            1.0
        } else {
            OFF_BLOCK_SCALE
        }
    };
    let mut rsj_acc = vec![0.0f64; num_tasks];
    let mut joint_acc = vec![0.0f64; num_tasks];
    for &seed in seeds {
        let mut rng = SplitMix64::new(derive(seed, streams::DATA));
        // unit-norm parameter on the task's own block
        let thetas: Vec<Array1<f64>> = (0..num_tasks)
            .map(|t| {
                let block = unit_vector(d, &mut rng);
                let mut th = Array1::<f64>::zeros(total);
                th.slice_mut(ndarray::s![t * d..(t + 1) * d]).assign(&block);
                th
            })
            .collect();
        let datasets: Vec<Dataset> = (0..num_tasks)
            .map(|t| {
                let mut gen = SplitMix64::new(derive2(seed, 30, t as u64));
                let mut x = ndarray::Array2::<f64>::zeros((n, total));
                for i in 0..n {
                    for j in 0..total {
                        x[[i, j]] = gen.next_normal() * weight(t, j);
                    }
                }
                let mut y = x.dot(&thetas[t]);
                for v in y.iter_mut() {
                    *v += sigma * gen.next_normal();
                }
                Dataset::regression(x, y)
            })
            .collect::<Result<_>>()?;
        let cfg = train_cfg(seed);
        let mut state: Option<PenaltyState> = None;
        for t in 0..num_tasks {
            let (theta_new, _) = match &state {
                None => train_first_task(&model, &datasets[t], &cfg)?,
                Some(st) => train_next_task(&model, &datasets[t], st, &cfg)?,
            };
            let j_t = model.jacobian(&theta_new, &datasets[t].features().view())?;
            let factor = build_approx_jacobian(
                Variant::Sketch(s),
                &j_t.view(),
                derive2(seed, streams::SKETCH, t as u64),
            )?;
            state = Some(match state.take() {
                None => PenaltyState::new(Variant::Sketch(s), theta_new.clone())
                    .accumulate(factor, theta_new.clone())?,
                Some(st) => st.accumulate(factor, theta_new.clone())?,
            });
            // averaged-risk minimizer: per-coordinate weighted mean
            let mut num = Array1::<f64>::zeros(total);
            let mut den = Array1::<f64>::zeros(total);
            for tt in 0..=t {
                for j in 0..total {
                    let w2 = weight(tt, j) * weight(tt, j);
                    num[j] += w2 * thetas[tt][j];
                    den[j] += w2;
                }
            }
            let optimal = &num / &den;
            let rd = theta_new.values() - &optimal;
            rsj_acc[t] += rd.dot(&rd).sqrt();
            let prefix: Vec<&Dataset> = datasets[..=t].iter().collect();
            let (tj, _) = joint_train(&model, &prefix, &cfg)?;
            let jd = tj.values() - &optimal;
            joint_acc[t] += jd.dot(&jd).sqrt();
        }
    }
    let k = seeds.len() as f64;
    Ok((0..num_tasks)
        .map(|t| {
            let rsj = rsj_acc[t] / k;
            let joint = joint_acc[t] / k;
            AccumulationRow { tasks: t + 1, rsj_err: rsj, joint_err: joint, gap: rsj - joint }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::loglog_slope;

    #[test]
    fn identical_noiseless_tasks_recovered_exactly() {
        // theta_a = theta_b, sigma = 0: theta* is interpolated to machine
        // precision once n >> d.
        let d = 5;
        let model = Model::linear(d, 1);
        let mut rng = SplitMix64::new(1);
        let theta = unit_vector(d, &mut rng);
        let da = crate::tasks::gaussian_linear_task(&theta, 0.0, 500, 2).unwrap();
        let db = crate::tasks::gaussian_linear_task(&theta, 0.0, 500, 3).unwrap();
        let cfg = train_cfg(0);
        let (tj, _) = joint_train(&model, &[&da, &db], &cfg).unwrap();
        let diff = tj.values() - &theta;
        assert!(diff.dot(&diff).sqrt() <= 1e-3, "joint error too large");
        // degenerate no-conflict sketched case: s >= d keeps the error tiny
        let t = rsj_two_tasks(&model, &da, &db, d, 4).unwrap();
        let diff = &t - &theta;
        assert!(diff.dot(&diff).sqrt() <= 1e-3, "rsj error too large");
    }

    #[test]
    fn joint_error_scales_like_inverse_sqrt_n() {
        let rows = regression_scaling_check(
            5,
            &[200, 400, 800, 1600],
            &[],
            1.0,
            1.0,
            0.2,
            &[0, 1, 2, 3, 4, 5],
        )
        .unwrap();
        let mut ns = Vec::new();
        let mut errs = Vec::new();
        for &n in &[200usize, 400, 800, 1600] {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && r.s.is_none())
                .map(|r| r.joint_err)
                .collect();
            ns.push(n as f64);
            errs.push(crate::stats::mean(&vals));
        }
        let slope = loglog_slope(&ns, &errs);
        assert!((slope + 0.5).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn sketch_deviation_scales_like_inverse_sqrt_s() {
        let rows = regression_scaling_check(
            5,
            &[800],
            &[5, 10, 20, 40, 80],
            1.0,
            1.0,
            0.1,
            &[0, 1, 2, 3, 4, 5, 6, 7],
        )
        .unwrap();
        let mut ss = Vec::new();
        let mut devs = Vec::new();
        for &s in &[5usize, 10, 20, 40, 80] {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.s == Some(s))
                .map(|r| r.sketch_dev.unwrap())
                .collect();
            ss.push(s as f64);
            devs.push(crate::stats::mean(&vals));
        }
        let slope = loglog_slope(&ss, &devs);
        assert!((slope + 0.5).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn accumulation_gap_grows_on_average() {
        let seeds: Vec<u64> = (0..10).collect();
        let rows = multitask_accumulation(10, 200, 10, 5, 0.2, &seeds).unwrap();
        assert_eq!(rows.len(), 5);
        for w in rows.windows(2) {
            assert!(
                w[1].gap >= w[0].gap - 0.02,
                "gap not nondecreasing: {} -> {}",
                w[0].gap,
                w[1].gap
            );
        }
        assert!(rows.last().unwrap().gap > 0.3, "final gap {}", rows.last().unwrap().gap);
    }
}
