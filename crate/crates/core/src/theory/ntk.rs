//! Tangent-kernel quantities for the theoretical two-layer net: the
//! data-complexity measure `sqrt(y' K^-1 y / n)`, the risk-bound
//! right-hand side, and a finite-width two-task run measured against it.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, cholesky_solve, frobenius, sym_eigen};
use crate::models::{ntk_gram, Dataset, Model};
use crate::regularizers::{JacobianFactor, PenaltyState, SketchMatrix, Variant};
use crate::rng::{derive, SplitMix64};
use crate::trainer::{train_first_task, train_next_task, TrainConfig};

/// `sqrt(y' K^-1 y / n)` with `n = len(y) / 2` (two tasks of `n` points).
/// Solves the system by Cholesky; never forms the inverse.
pub fn ntk_complexity(y: &ArrayView1<f64>, k: &ArrayView2<f64>) -> Result<f64> {
    let total = y.len();
    if total == 0 || total % 2 != 0 {
        return Err(invalid("ntk_complexity expects a nonempty even-length label vector"));
    }
    if k.nrows() != total || k.ncols() != total {
        return Err(invalid("Gram matrix shape does not match the label vector"));
    }
    let (vals, _) = sym_eigen(k)?;
    let alpha = vals[0];
    if alpha <= 1e-12 {
        return Err(Error::SingularGram { alpha });
    }
    let l = cholesky(k).ok_or(Error::SingularGram { alpha })?;
    let x = cholesky_solve(&l.view(), y);
    let n = (total / 2) as f64;
    Ok((y.dot(&x) / n).sqrt())
}

/// Right-hand side of the two-task risk bound:
/// `2 sqrt(y' K^-1 y / n) + 3/sqrt(n) + (10 ||J_A||_F + ||K||_F / sqrt(n))
/// / (sqrt(s) alpha^2)`.
pub fn ntk_risk_bound_rhs(
    y: &ArrayView1<f64>,
    k: &ArrayView2<f64>,
    j_a_frob: f64,
    s: usize,
    alpha: f64,
    n: usize,
) -> Result<f64> {
    if y.len() != 2 * n {
        return Err(invalid("label vector must have length 2n"));
    }
    if s == 0 || n == 0 {
        return Err(invalid("s and n must be >= 1"));
    }
    if alpha <= 1e-12 {
        return Err(Error::SingularGram { alpha });
    }
    let complexity = ntk_complexity(y, k)?;
    let nf = n as f64;
    let perturbation =
        (10.0 * j_a_frob + frobenius(k) / nf.sqrt()) / ((s as f64).sqrt() * alpha * alpha);
    Ok(2.0 * complexity + 3.0 / nf.sqrt() + perturbation)
}

/// Outcome of the finite-width two-task run compared against the bound.
#[derive(Clone, Debug)]
pub struct NtkExperimentReport {
    /// Pooled empirical risk `mean(min(|f - y|, 1))` over both tasks.
    pub measured_l1_risk: f64,
    pub bound_rhs: f64,
    pub complexity: f64,
    pub alpha: f64,
    pub j_a_frob: f64,
    pub iterations_task_a: usize,
    pub iterations_task_b: usize,
    pub pass: bool,
}

fn unit_rows(n: usize, d: usize, rng: &mut SplitMix64) -> Array2<f64> {
    let mut x = Array2::from_shape_fn((n, d), |_| rng.next_normal());
    for mut row in x.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    x
}

/// Trains the theoretical two-layer net sequentially on two synthetic
/// tasks (unit-norm inputs, bounded linear targets) with the sketched
/// penalty, then compares the pooled empirical l1 risk (clipped at 1, as
/// the bound assumes a [0,1] loss) against [`ntk_risk_bound_rhs`].
#[allow(clippy::too_many_arguments)]
pub fn rsj_ntk_two_task_run(
    d: usize,
    n_per_task: usize,
    width: usize,
    s: usize,
    t_task_b: usize,
    seed: u64,
    bound_scale: f64,
) -> Result<NtkExperimentReport> {
    let mut rng = SplitMix64::new(derive(seed, 1));
    let x_a = unit_rows(n_per_task, d, &mut rng);
    let x_b = unit_rows(n_per_task, d, &mut rng);
    let mut w_a = Array1::from_iter((0..d).map(|_| rng.next_normal()));
    let na = w_a.dot(&w_a).sqrt();
    w_a.mapv_inplace(|v| v / na);
    let mut w_b = Array1::from_iter((0..d).map(|_| rng.next_normal()));
    let nb = w_b.dot(&w_b).sqrt();
    w_b.mapv_inplace(|v| v / nb);
    let y_a = x_a.dot(&w_a);
    let y_b = x_b.dot(&w_b);

    let model = Model::two_layer_theoretical(d, width, 1.0)?;
    let task_a = Dataset::regression(x_a.clone(), y_a.clone())?;
    let task_b = Dataset::regression(x_b.clone(), y_b.clone())?;

    let cfg_a = TrainConfig { max_iters: 3000, grad_tol: 1e-8, seed, ..Default::default() };
    let (theta_a, trace_a) = train_first_task(&model, &task_a, &cfg_a)?;

    // Jacobian of task A at the anchor: sketch it and record its norm.
    let j_a = model.jacobian(&theta_a, &x_a.view())?;
    let j_a_frob = frobenius(&j_a.view());
    let sketch = SketchMatrix::gaussian(s, n_per_task, derive(seed, 2));
    let k_a = sketch.entries().dot(&j_a);
    drop(j_a);
    let state = PenaltyState::new(Variant::Sketch(s), theta_a.clone())
        .accumulate(JacobianFactor::Dense(k_a), theta_a)?;

    let cfg_b = TrainConfig {
        max_iters: t_task_b,
        grad_tol: 1e-10,
        lambda: 1.0,
        seed: derive(seed, 3),
        ..Default::default()
    };
    let (theta_ab, trace_b) = train_next_task(&model, &task_b, &state, &cfg_b)?;

    // pooled clipped-l1 empirical risk over both tasks
    let mut abs_sum = 0.0;
    for (x, y) in [(&x_a, &y_a), (&x_b, &y_b)] {
        let pred = model.predict(&theta_ab, &x.view())?;
        for i in 0..n_per_task {
            abs_sum += (pred[[i, 0]] - y[i]).abs().min(1.0);
        }
    }
    let measured = abs_sum / (2 * n_per_task) as f64;

    let x_all = concatenate(Axis(0), &[x_a.view(), x_b.view()]).unwrap();
    let y_all = concatenate(Axis(0), &[y_a.view(), y_b.view()]).unwrap();
    let gram = ntk_gram(&x_all.view())?;
    let (vals, _) = sym_eigen(&gram.view())?;
    let alpha = vals[0];
    if alpha <= 1e-12 {
        return Err(Error::SingularGram { alpha });
    }
    let complexity = ntk_complexity(&y_all.view(), &gram.view())?;
    let rhs = ntk_risk_bound_rhs(&y_all.view(), &gram.view(), j_a_frob, s, alpha, n_per_task)?;
    let bound = rhs * bound_scale;

    Ok(NtkExperimentReport {
        measured_l1_risk: measured,
        bound_rhs: bound,
        complexity,
        alpha,
        j_a_frob,
        iterations_task_a: trace_a.iterations,
        iterations_task_b: trace_b.iterations,
        pass: measured <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn complexity_identity_gram() {
        // K = I, y = ones(2n) -> sqrt(2n / n) = sqrt(2)
        let n = 4;
        let k = Array2::<f64>::eye(2 * n);
        let y = Array1::<f64>::ones(2 * n);
        let c = ntk_complexity(&y.view(), &k.view()).unwrap();
        assert_relative_eq!(c, 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn complexity_zero_labels() {
        let k = Array2::<f64>::eye(6);
        let y = Array1::<f64>::zeros(6);
        assert_eq!(ntk_complexity(&y.view(), &k.view()).unwrap(), 0.0);
    }

    #[test]
    fn complexity_hand_two_by_two() {
        // K = [[1/2, 1/4], [1/4, 1/2]], y = (1,1), n = 1 -> sqrt(8/3)
        let k = array![[0.5, 0.25], [0.25, 0.5]];
        let y = array![1.0, 1.0];
        let c = ntk_complexity(&y.view(), &k.view()).unwrap();
        assert_relative_eq!(c, (8.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn complexity_rejects_singular_gram() {
        let k = array![[1.0, 1.0], [1.0, 1.0]];
        let y = array![1.0, 1.0];
        match ntk_complexity(&y.view(), &k.view()) {
            Err(Error::SingularGram { .. }) => {}
            other => panic!("expected singular-Gram error, got {other:?}"),
        }
    }

    #[test]
    fn rhs_limits() {
        let n = 8;
        let k = Array2::<f64>::eye(2 * n);
        let y = Array1::<f64>::ones(2 * n);
        let complexity = ntk_complexity(&y.view(), &k.view()).unwrap();
        // huge s: perturbation vanishes
        let rhs = ntk_risk_bound_rhs(&y.view(), &k.view(), 3.0, 1 << 40, 1.0, n).unwrap();
        let limit = 2.0 * complexity + 3.0 / (n as f64).sqrt();
        assert_relative_eq!(rhs, limit, max_relative = 1e-5);
        // doubling s scales only the perturbation term by 1/sqrt(2)
        let r1 = ntk_risk_bound_rhs(&y.view(), &k.view(), 3.0, 100, 1.0, n).unwrap();
        let r2 = ntk_risk_bound_rhs(&y.view(), &k.view(), 3.0, 200, 1.0, n).unwrap();
        let p1 = r1 - limit;
        let p2 = r2 - limit;
        assert_relative_eq!(p2, p1 / 2.0f64.sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn rhs_monotone_in_s_and_n() {
        let n = 8;
        let k = Array2::<f64>::eye(2 * n);
        let y = Array1::<f64>::ones(2 * n);
        let mut last = f64::INFINITY;
        for s in [10, 20, 40, 80, 160] {
            let r = ntk_risk_bound_rhs(&y.view(), &k.view(), 3.0, s, 1.0, n).unwrap();
            assert!(r <= last);
            last = r;
        }
        // monotone in the n argument with y, K fixed
        let mut last = f64::INFINITY;
        for n_arg in [1usize, 2, 4, 8] {
            let y = Array1::<f64>::ones(2 * n_arg);
            let k = Array2::<f64>::eye(2 * n_arg);
            let r = ntk_risk_bound_rhs(&y.view(), &k.view(), 3.0, 50, 1.0, n_arg).unwrap();
            assert!(r <= last, "rhs not monotone at n = {n_arg}");
            last = r;
        }
    }

    #[test]
    fn finite_width_run_small_scale() {
        // reduced-width smoke version of the acceptance-scale run
        let rep = rsj_ntk_two_task_run(6, 30, 512, 60, 400, 5, 1.0).unwrap();
        assert!(rep.alpha > 0.0);
        assert!(rep.measured_l1_risk.is_finite());
        assert!(rep.pass, "measured {} vs bound {}", rep.measured_l1_risk, rep.bound_rhs);
    }
}
