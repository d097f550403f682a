//! Partially sketched least squares: the exact two-block gradient-descent
//! recursion, and Monte-Carlo evaluation of the iterate-deviation bounds.
//!
//! The stacked problem is `J = [J_A; J_B]`, `y = [J_A theta_A; y_B]`, with
//! the `J_A` block replaced by its sketch `S J_A`. Gradient descent on the
//! sketched loss follows `theta^{t+1} = theta^t - eta (J^T P J theta^t -
//! J^T P y)` with `P = diag(S^T S, I)`; the reference iterates use `P = I`.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::{frobenius, random_orthonormal, spectral_norm, thin_svd};
use crate::regularizers::SketchMatrix;
use crate::rng::{derive2, streams, SplitMix64};

/// Iterates of gradient descent on the quadratic `1/2 theta' M theta -
/// b' theta + c`, starting at zero. Returns `t + 1` vectors.
fn quadratic_gd_iterates(
    m: &Array2<f64>,
    b: &Array1<f64>,
    constant: f64,
    eta: f64,
    t: usize,
) -> Result<Vec<Array1<f64>>> {
    let p = b.len();
    let mut theta = Array1::<f64>::zeros(p);
    let mut out = Vec::with_capacity(t + 1);
    out.push(theta.clone());
    for _ in 0..t {
        let grad = m.dot(&theta) - b;
        let loss = 0.5 * theta.dot(&m.dot(&theta)) - b.dot(&theta) + constant;
        if !loss.is_finite() || loss > 1e12 {
            return Err(Error::Diverged { stepsize: eta, loss });
        }
        theta.scaled_add(-eta, &grad);
        out.push(theta.clone());
    }
    Ok(out)
}

/// Gradient-descent iterates on the plain least squares `1/2 ||J theta -
/// y||^2` from zero.
pub fn plain_gd_iterates(
    j: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    eta: f64,
    t: usize,
) -> Result<Vec<Array1<f64>>> {
    if j.nrows() != y.len() {
        return Err(invalid("plain_gd_iterates: row count mismatch"));
    }
    let m = j.t().dot(j);
    let b = j.t().dot(y);
    quadratic_gd_iterates(&m, &b, 0.5 * y.dot(y), eta, t)
}

/// Iterates of the partially sketched problem: the task-A block is sketched
/// by `s_matrix`, task B keeps its raw rows. Starts at zero.
pub fn partially_sketched_gd(
    j_a: &ArrayView2<f64>,
    j_b: &ArrayView2<f64>,
    y_b: &ArrayView1<f64>,
    theta_a: &ArrayView1<f64>,
    s_matrix: &ArrayView2<f64>,
    eta: f64,
    t: usize,
) -> Result<Vec<Array1<f64>>> {
    let p = j_a.ncols();
    if j_b.ncols() != p || theta_a.len() != p {
        return Err(invalid("partially_sketched_gd: parameter dimension mismatch"));
    }
    if j_b.nrows() != y_b.len() {
        return Err(invalid("partially_sketched_gd: task-B row count mismatch"));
    }
    if s_matrix.ncols() != j_a.nrows() {
        return Err(invalid("partially_sketched_gd: sketch width must equal task-A rows"));
    }
    if !(eta > 0.0) {
        return Err(invalid("stepsize must be positive"));
    }
    let k = s_matrix.dot(j_a); // s x p
    let k_theta_a = k.dot(theta_a);
    let m = k.t().dot(&k) + j_b.t().dot(j_b);
    let b = k.t().dot(&k_theta_a) + j_b.t().dot(y_b);
    let constant = 0.5 * (k_theta_a.dot(&k_theta_a) + y_b.dot(y_b));
    quadratic_gd_iterates(&m, &b, constant, eta, t)
}

/// A fixed two-task least-squares instance for deviation experiments.
#[derive(Clone, Debug)]
pub struct SketchInstance {
    pub j_a: Array2<f64>,
    pub j_b: Array2<f64>,
    pub y_b: Array1<f64>,
    pub theta_a: Array1<f64>,
}

impl SketchInstance {
    pub fn stacked(&self) -> (Array2<f64>, Array1<f64>) {
        let j = concatenate(Axis(0), &[self.j_a.view(), self.j_b.view()]).unwrap();
        let y_a = self.j_a.dot(&self.theta_a);
        let y = concatenate(Axis(0), &[y_a.view(), self.y_b.view()]).unwrap();
        (j, y)
    }
}

/// Builds `J = U diag(sv) V^T` from seeded orthonormal factors, splits the
/// rows into two equal tasks, and relabels task B as `J_B theta_A` plus
/// `noise`-scaled Gaussian perturbation. The top singular directions stay
/// dominant in `y`, which keeps the part-i iteration condition satisfiable.
pub fn synthetic_sketch_instance(
    n_a: usize,
    n_b: usize,
    singular_values: &[f64],
    noise: f64,
    seed: u64,
) -> SketchInstance {
    let p = singular_values.len();
    let n = n_a + n_b;
    let u = random_orthonormal(n, p, seed);
    let v = random_orthonormal(p, p, seed ^ 0x5DEECE66D);
    let sigma = Array2::from_diag(&Array1::from(singular_values.to_vec()));
    let j = u.dot(&sigma).dot(&v.t());
    let j_a = j.slice(ndarray::s![0..n_a, ..]).to_owned();
    let j_b = j.slice(ndarray::s![n_a.., ..]).to_owned();
    let mut rng = SplitMix64::new(seed ^ 0xA5A5_A5A5);
    let mut theta_a = Array1::from_iter((0..p).map(|_| rng.next_normal()));
    let norm = theta_a.dot(&theta_a).sqrt();
    theta_a.mapv_inplace(|x| x / norm);
    let mut y_b = j_b.dot(&theta_a);
    for v in y_b.iter_mut() {
        *v += noise * rng.next_normal();
    }
    SketchInstance { j_a, j_b, y_b, theta_a }
}

/// Outcome of the Monte-Carlo deviation check.
#[derive(Clone, Debug)]
pub struct SketchDeviationReport {
    pub s: usize,
    pub t: usize,
    pub r: usize,
    pub eta: f64,
    pub trials: usize,
    /// ||theta_t - theta~_t|| at the final iterate, averaged over trials.
    pub mean_deviation: f64,
    pub max_deviation: f64,
    /// Part-i deviation bound `8 ||J_A||_F ||U_r' y|| / (sqrt(s) sigma_r^2)`.
    pub bound_part_i: f64,
    /// Whether `t` satisfies the part-i iteration condition.
    pub condition_part_i: bool,
    /// Fraction of trials whose final deviation exceeded the part-i bound.
    pub violation_frequency: f64,
    /// Allowed violation mass `4 t exp(-||J_A||_F^2 / (2 ||J_A||^2))`.
    pub probability_target: f64,
    /// sup_t deviation per trial, averaged; the part-ii measurement.
    pub mean_sup_deviation: f64,
    /// mean_sup_deviation / (sigma_max sigma_r^-2 sqrt(r/s) ||r0||); fits
    /// the unspecified part-ii constant.
    pub part_ii_ratio: f64,
    pub pass: bool,
}

/// Largest `t` with `(1 - eta sigma_min^2)^t >= 1 - (sigma_min^2 /
/// sigma_r^2) * ||U_r' y|| / ||U_n' y||`, capped at `t_cap`.
fn max_t_for_condition(
    eta: f64,
    sigma_min: f64,
    sigma_r: f64,
    top_energy: f64,
    tail_energy: f64,
    t_cap: usize,
) -> usize {
    if tail_energy <= 1e-300 {
        return t_cap;
    }
    let rhs = 1.0 - (sigma_min * sigma_min) / (sigma_r * sigma_r) * (top_energy / tail_energy);
    if rhs <= 0.0 {
        return t_cap;
    }
    if rhs >= 1.0 {
        return 0;
    }
    let base = 1.0 - eta * sigma_min * sigma_min;
    if base <= 0.0 || base >= 1.0 {
        return t_cap;
    }
    let t = (rhs.ln() / base.ln()).floor();
    (t.max(0.0) as usize).min(t_cap)
}

/// Runs `trials` fresh sketches of the given instance and measures iterate
/// deviations against the part-i and part-ii bounds.
///
/// `eta` defaults to `0.9 / sigma_max^2`; `t` defaults to the largest value
/// satisfying the part-i condition (capped at 2000). `bound_scale`
/// multiplies the deviation bound (negative-control hook; use 1).
#[allow(clippy::too_many_arguments)]
pub fn theorem1_check(
    instance: &SketchInstance,
    s: usize,
    r: usize,
    eta: Option<f64>,
    t: Option<usize>,
    trials: usize,
    seed: u64,
    bound_scale: f64,
) -> Result<SketchDeviationReport> {
    if trials == 0 {
        return Err(invalid("theorem1_check requires at least one trial"));
    }
    if s == 0 {
        return Err(invalid("sketch dimension must be >= 1"));
    }
    let (j, y) = instance.stacked();
    let p = j.ncols();
    if r == 0 || r > p {
        return Err(invalid(format!("rank parameter r={r} outside 1..={p}")));
    }
    let svd = thin_svd(&j.view())?;
    let sigma_max = svd.s[0];
    let sigma_r = svd.s[r - 1];
    let sigma_min = svd.s[p - 1];
    if sigma_r <= 1e-12 * sigma_max.max(1.0) {
        return Err(Error::DegenerateRank { rank: r });
    }
    let ur_y = svd.u.slice(ndarray::s![.., 0..r]).t().dot(&y);
    let top_energy = ur_y.dot(&ur_y).sqrt();
    let tail_energy = (y.dot(&y) - top_energy * top_energy).max(0.0).sqrt();
    let eta = eta.unwrap_or(0.9 / (sigma_max * sigma_max));
    let t_cap = 2000;
    let t = t.unwrap_or_else(|| {
        max_t_for_condition(eta, sigma_min, sigma_r, top_energy, tail_energy, t_cap).max(1)
    });
    let condition_part_i = {
        let lhs = (1.0 - eta * sigma_min * sigma_min).powi(t as i32);
        let rhs = 1.0
            - (sigma_min * sigma_min) / (sigma_r * sigma_r)
                * if tail_energy <= 1e-300 { f64::INFINITY } else { top_energy / tail_energy };
        lhs >= rhs
    };

    let j_a_frob = frobenius(&instance.j_a.view());
    let j_a_spec = spectral_norm(&instance.j_a.view(), 200, seed ^ 0x77);
    let bound_part_i =
        8.0 * j_a_frob / ((s as f64).sqrt() * sigma_r) * (1.0 / sigma_r) * top_energy * bound_scale;
    let probability_target =
        4.0 * t as f64 * (-j_a_frob * j_a_frob / (2.0 * j_a_spec * j_a_spec)).exp();

    let reference = plain_gd_iterates(&j.view(), &y.view(), eta, t)?;
    let r0_norm = y.dot(&y).sqrt(); // residual at theta_0 = 0 is -y

    let results: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = derive2(seed, streams::TRIAL, trial as u64);
            let sk = SketchMatrix::gaussian(s, instance.j_a.nrows(), trial_seed);
            let sketched = partially_sketched_gd(
                &instance.j_a.view(),
                &instance.j_b.view(),
                &instance.y_b.view(),
                &instance.theta_a.view(),
                &sk.entries().view(),
                eta,
                t,
            )
            .expect("sketched recursion diverged");
            let mut sup_dev = 0.0f64;
            for (a, b) in sketched.iter().zip(reference.iter()) {
                let d = a - b;
                sup_dev = sup_dev.max(d.dot(&d).sqrt());
            }
            let d_final = &sketched[t] - &reference[t];
            (d_final.dot(&d_final).sqrt(), sup_dev)
        })
        .collect();

    let final_devs: Vec<f64> = results.iter().map(|r| r.0).collect();
    let sup_devs: Vec<f64> = results.iter().map(|r| r.1).collect();
    let mean_deviation = crate::stats::mean(&final_devs);
    let max_deviation = final_devs.iter().cloned().fold(0.0, f64::max);
    let mean_sup_deviation = crate::stats::mean(&sup_devs);
    let violations = final_devs.iter().filter(|&&d| d > bound_part_i).count();
    let violation_frequency = violations as f64 / trials as f64;
    let part_ii_scale = sigma_max / (sigma_r * sigma_r) * (r as f64 / s as f64).sqrt() * r0_norm;
    let part_ii_ratio = mean_sup_deviation / part_ii_scale;
    let pass = condition_part_i && violation_frequency <= probability_target + 0.02;

    Ok(SketchDeviationReport {
        s,
        t,
        r,
        eta,
        trials,
        mean_deviation,
        max_deviation,
        bound_part_i,
        condition_part_i,
        violation_frequency,
        probability_target,
        mean_sup_deviation,
        part_ii_ratio,
        pass,
    })
}

/// Mean (over trials) of `sup_t ||theta_t - theta~_t||` for each sketch
/// size; input to the part-ii scaling fit.
pub fn sup_deviation_per_sketch_size(
    instance: &SketchInstance,
    s_grid: &[usize],
    t_max: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let (j, y) = instance.stacked();
    let svd = thin_svd(&j.view())?;
    let eta = 0.9 / (svd.s[0] * svd.s[0]);
    let reference = plain_gd_iterates(&j.view(), &y.view(), eta, t_max)?;
    let mut out = Vec::with_capacity(s_grid.len());
    for (si, &s) in s_grid.iter().enumerate() {
        let sups: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let trial_seed = derive2(seed, streams::TRIAL, (si * trials + trial) as u64);
                let sk = SketchMatrix::gaussian(s, instance.j_a.nrows(), trial_seed);
                let sketched = partially_sketched_gd(
                    &instance.j_a.view(),
                    &instance.j_b.view(),
                    &instance.y_b.view(),
                    &instance.theta_a.view(),
                    &sk.entries().view(),
                    eta,
                    t_max,
                )
                .expect("sketched recursion diverged");
                let mut sup = 0.0f64;
                for (a, b) in sketched.iter().zip(reference.iter()) {
                    let d = a - b;
                    sup = sup.max(d.dot(&d).sqrt());
                }
                sup
            })
            .collect();
        out.push((s, crate::stats::mean(&sups)));
    }
    Ok(out)
}
