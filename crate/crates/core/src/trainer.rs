//! Gradient descent on quadratic losses with accumulated penalties,
//! sequential multi-task training, the joint "all data" baseline, and
//! pooled single-head evaluation.
//!
//! For the linear-in-parameter families the full-batch objective is driven
//! through the per-task Gram matrix `Phi^T Phi` (an exact algebraic rewrite
//! of the same recursion), so one featurization pass per task covers any
//! number of iterations. Networks train by backpropagation, full- or
//! mini-batch.

use std::borrow::Cow;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};
use crate::linalg::power_method;
use crate::models::{Dataset, Model, ParamVector};
use crate::regularizers::{
    build_approx_jacobian, JacobianFactor, PenaltyState, StreamingEwcDiag, StreamingSketch,
    Variant,
};
use crate::rng::{derive, derive2, streams, SplitMix64};

/// Rows per block when featurizing or evaluating large datasets.
const FEATURE_BLOCK: usize = 2048;
/// Loss threshold treated as divergence.
const DIVERGENCE_LIMIT: f64 = 1e12;
/// Power-iteration count behind automatic stepsizes.
const POWER_ITERS: usize = 100;
/// Safety factor under the curvature bound.
const STEP_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stepsize {
    /// `0.9 / lambda_max` of the effective quadratic form, estimated by 100
    /// power iterations (falls back to 1 for a zero form).
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    /// Mini-batch steps of the given size; `max_iters` counts batch steps.
    Mini(usize),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub stepsize: Stepsize,
    pub max_iters: usize,
    /// Penalty strength for `train_next_task` / `run_sequence`.
    pub lambda: f64,
    /// Early stop once the full-objective gradient norm falls to this.
    pub grad_tol: f64,
    pub batch: BatchMode,
    pub seed: u64,
    /// Optional explicit starting point (overrides the per-op default).
    pub init: Option<Array1<f64>>,
    /// Record the parameter vector at every iteration.
    pub record_iterates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stepsize: Stepsize::Auto,
            max_iters: 1000,
            lambda: 1.0,
            grad_tol: 1e-8,
            batch: BatchMode::Full,
            seed: 0,
            init: None,
            record_iterates: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainTrace {
    /// Objective value before each iteration, plus the final value.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub stepsize: f64,
    pub iterates: Option<Vec<Array1<f64>>>,
}

/// Quadratic objective of one or more tasks for a linear-in-theta model.
struct LinearQuadratic {
    gram: Array2<f64>, // m x m
    xty: Array2<f64>,  // m x q
    y_sq: f64,
    q: usize,
    m: usize,
    n: usize,
    /// Raw rows, kept only for mini-batch mode.
    rows: Option<(Array2<f64>, Array2<f64>)>,
}

impl LinearQuadratic {
    fn from_datasets(model: &Model, datasets: &[&Dataset], keep_rows: bool) -> Result<Self> {
        let m = model
            .feature_dim()
            .ok_or_else(|| invalid("linear objective requires a linear-in-parameter model"))?;
        let q = model.outputs();
        let mut gram = Array2::<f64>::zeros((m, m));
        let mut xty = Array2::<f64>::zeros((m, q));
        let mut y_sq = 0.0;
        let mut n = 0usize;
        let mut kept: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>)> =
            if keep_rows { Some((Vec::new(), Vec::new())) } else { None };
        for data in datasets {
            if data.outputs() != q {
                return Err(invalid(format!(
                    "dataset has {} target columns, model expects {q}",
                    data.outputs()
                )));
            }
            n += data.n();
            let x = data.features();
            let y = data.targets();
            let mut row = 0;
            while row < x.nrows() {
                let hi = (row + FEATURE_BLOCK).min(x.nrows());
                let phi = model.feature_map(&x.slice(s![row..hi, ..]))?;
                let yb = y.slice(s![row..hi, ..]);
                gram += &phi.t().dot(&phi);
                xty += &phi.t().dot(&yb);
                y_sq += yb.iter().map(|v| v * v).sum::<f64>();
                if let Some((ps, ys)) = kept.as_mut() {
                    ps.push(phi);
                    ys.push(yb.to_owned());
                }
                row = hi;
            }
        }
        let rows = kept.map(|(ps, ys)| {
            let phi = ndarray::concatenate(
                Axis(0),
                &ps.iter().map(|p| p.view()).collect::<Vec<_>>(),
            )
            .unwrap();
            let y = ndarray::concatenate(
                Axis(0),
                &ys.iter().map(|p| p.view()).collect::<Vec<_>>(),
            )
            .unwrap();
            (phi, y)
        });
        Ok(Self { gram, xty, y_sq, q, m, n, rows })
    }

    fn as_heads<'v>(&self, theta: &ArrayView1<'v, f64>) -> ArrayView2<'v, f64> {
        theta.reborrow().into_shape_with_order((self.q, self.m)).unwrap()
    }
}

/// One task's data for a network objective.
struct NetworkObjective<'a> {
    model: &'a Model,
    x: Array2<f64>,
    y: Array2<f64>,
}

enum Objective<'a> {
    Linear(LinearQuadratic),
    Network(NetworkObjective<'a>),
}

impl<'a> Objective<'a> {
    fn build(model: &'a Model, datasets: &[&Dataset], batch: BatchMode) -> Result<Self> {
        for d in datasets {
            if d.input_dim() != model.input_dim() {
                return Err(invalid("dataset input dimension differs from the model's"));
            }
        }
        if model.is_linear_in_params() {
            let keep_rows = matches!(batch, BatchMode::Mini(_));
            Ok(Objective::Linear(LinearQuadratic::from_datasets(model, datasets, keep_rows)?))
        } else {
            let q = model.outputs();
            for d in datasets {
                if d.outputs() != q {
                    return Err(invalid("dataset target columns differ from model outputs"));
                }
            }
            let x = ndarray::concatenate(
                Axis(0),
                &datasets.iter().map(|d| d.features().view()).collect::<Vec<_>>(),
            )
            .unwrap();
            let y = ndarray::concatenate(
                Axis(0),
                &datasets.iter().map(|d| d.targets().view()).collect::<Vec<_>>(),
            )
            .unwrap();
            Ok(Objective::Network(NetworkObjective { model, x, y }))
        }
    }

    fn dim(&self) -> usize {
        match self {
            Objective::Linear(o) => o.q * o.m,
            Objective::Network(o) => o.model.param_count(),
        }
    }

    fn n_examples(&self) -> usize {
        match self {
            Objective::Linear(o) => o.n,
            Objective::Network(o) => o.x.nrows(),
        }
    }

    /// Full-batch loss and gradient of the task term.
    fn loss_grad(&self, theta: &ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
        match self {
            Objective::Linear(o) => {
                let w = o.as_heads(theta);
                let wg = w.dot(&o.gram); // q x m
                let quad: f64 = (&wg * &w).sum();
                let cross: f64 = w
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(c, row)| row.dot(&o.xty.column(c)))
                    .sum();
                let loss = 0.5 * (quad - 2.0 * cross + o.y_sq);
                let grad = &wg - &o.xty.t();
                Ok((loss, flatten(grad.to_owned())))
            }
            Objective::Network(o) => {
                let theta_p = ParamVector::new(theta.to_owned(), o.model.layout())?;
                let pred = o.model.predict(&theta_p, &o.x.view())?;
                let resid = &pred - &o.y;
                let loss = 0.5 * resid.iter().map(|v| v * v).sum::<f64>();
                let grad = o.model.vec_jacobian(
                    &theta_p,
                    &o.x.view(),
                    &flatten(resid).view(),
                )?;
                Ok((loss, grad))
            }
        }
    }

    /// Mini-batch loss and gradient, scaled to full-batch magnitude.
    fn batch_loss_grad(&self, theta: &ArrayView1<f64>, idx: &[usize]) -> Result<(f64, Array1<f64>)> {
        let scale = self.n_examples() as f64 / idx.len() as f64;
        match self {
            Objective::Linear(o) => {
                let (phi_all, y_all) = o
                    .rows
                    .as_ref()
                    .expect("mini-batch requires retained rows");
                let phi = phi_all.select(Axis(0), idx);
                let y = y_all.select(Axis(0), idx);
                let w = o.as_heads(theta);
                let pred = phi.dot(&w.t());
                let resid = &pred - &y;
                let loss = 0.5 * scale * resid.iter().map(|v| v * v).sum::<f64>();
                let grad = resid.t().dot(&phi); // q x m
                Ok((loss, flatten(grad.mapv(|v| v * scale))))
            }
            Objective::Network(o) => {
                let x = o.x.select(Axis(0), idx);
                let y = o.y.select(Axis(0), idx);
                let theta_p = ParamVector::new(theta.to_owned(), o.model.layout())?;
                let pred = o.model.predict(&theta_p, &x.view())?;
                let resid = &pred - &y;
                let loss = 0.5 * scale * resid.iter().map(|v| v * v).sum::<f64>();
                let grad = o.model.vec_jacobian(&theta_p, &x.view(), &flatten(resid).view())?;
                Ok((loss, grad.mapv(|v| v * scale)))
            }
        }
    }

    /// Gauss-Newton Hessian-vector product `J^T J v` of the task term,
    /// evaluated at `theta` (exact for the linear families). For large
    /// network datasets the product is estimated on a seeded row subsample
    /// and rescaled.
    fn gauss_newton_matvec(
        &self,
        theta: &ArrayView1<f64>,
        v: &ArrayView1<f64>,
        seed: u64,
    ) -> Result<Array1<f64>> {
        match self {
            Objective::Linear(o) => {
                let w = v.into_shape_with_order((o.q, o.m)).unwrap();
                Ok(flatten(w.dot(&o.gram)))
            }
            Objective::Network(o) => {
                let n = o.x.nrows();
                let cap = 4096;
                let theta_p = ParamVector::new(theta.to_owned(), o.model.layout())?;
                if n <= cap {
                    let jv = o.model.jacobian_vec(&theta_p, &o.x.view(), v)?;
                    o.model.vec_jacobian(&theta_p, &o.x.view(), &jv.view())
                } else {
                    let mut rng = SplitMix64::new(derive(seed, streams::POWER_ITER));
                    let idx = rng.sample_indices(n, cap);
                    let x = o.x.select(Axis(0), &idx);
                    let jv = o.model.jacobian_vec(&theta_p, &x.view(), v)?;
                    let jtjv = o.model.vec_jacobian(&theta_p, &x.view(), &jv.view())?;
                    Ok(jtjv.mapv(|z| z * n as f64 / cap as f64))
                }
            }
        }
    }
}

fn flatten(a: Array2<f64>) -> Array1<f64> {
    let len = a.len();
    a.into_shape_with_order(len).unwrap()
}

/// Stepsize from the combined task + penalty quadratic form.
fn stepsize_for(
    obj: &Objective,
    penalty: Option<(&PenaltyState, f64)>,
    theta0: &ArrayView1<f64>,
    cfg: &TrainConfig,
) -> Result<f64> {
    match cfg.stepsize {
        Stepsize::Fixed(eta) => {
            if !(eta > 0.0) {
                return Err(invalid("explicit stepsize must be positive"));
            }
            Ok(eta)
        }
        Stepsize::Auto => {
            let dim = obj.dim();
            let theta_owned = theta0.to_owned();
            let lam_max = power_method(
                |v| {
                    let mut h = obj
                        .gauss_newton_matvec(&theta_owned.view(), v, cfg.seed)
                        .expect("matvec failed during stepsize estimation");
                    if let Some((state, lambda)) = penalty {
                        h += &state.hessian_matvec(v, lambda);
                    }
                    h
                },
                dim,
                POWER_ITERS,
                derive(cfg.seed, streams::POWER_ITER),
            );
            if lam_max <= 1e-30 {
                Ok(1.0)
            } else {
                Ok(STEP_SAFETY / lam_max)
            }
        }
    }
}

/// Core descent loop shared by every public training operation.
fn minimize(
    obj: &Objective,
    penalty: Option<(&PenaltyState, f64)>,
    theta0: Array1<f64>,
    cfg: &TrainConfig,
) -> Result<(Array1<f64>, TrainTrace)> {
    let eta = stepsize_for(obj, penalty, &theta0.view(), cfg)?;
    let mut theta = theta0;
    let mut losses = Vec::with_capacity(cfg.max_iters + 1);
    let mut iterates = cfg.record_iterates.then(Vec::new);
    let mut batch_rng = SplitMix64::new(derive(cfg.seed, streams::BATCH));
    let mut order: Vec<usize> = (0..obj.n_examples()).collect();
    let mut cursor = usize::MAX; // forces an initial shuffle
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        let (task_loss, mut grad) = match cfg.batch {
            BatchMode::Full => obj.loss_grad(&theta.view())?,
            BatchMode::Mini(b) => {
                let b = b.max(1).min(obj.n_examples());
                if cursor.saturating_add(b) > order.len() {
                    batch_rng.shuffle(&mut order);
                    cursor = 0;
                }
                let idx = &order[cursor..cursor + b];
                cursor += b;
                obj.batch_loss_grad(&theta.view(), idx)?
            }
        };
        let mut loss = task_loss;
        if let Some((state, lambda)) = penalty {
            loss += state.penalty_value_raw(&theta.view(), lambda)?;
            grad += &state.penalty_gradient_raw(&theta.view(), lambda)?;
        }
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { stepsize: eta, loss });
        }
        losses.push(loss);
        if let Some(iters) = iterates.as_mut() {
            iters.push(theta.clone());
        }
        grad_norm = grad.dot(&grad).sqrt();
        if grad_norm <= cfg.grad_tol {
            break;
        }
        theta.scaled_add(-eta, &grad);
        iterations += 1;
    }

    // final objective value
    let (task_loss, grad) = match cfg.batch {
        BatchMode::Full => obj.loss_grad(&theta.view())?,
        BatchMode::Mini(_) => obj.loss_grad(&theta.view())?,
    };
    let mut final_loss = task_loss;
    let mut grad = grad;
    if let Some((state, lambda)) = penalty {
        final_loss += state.penalty_value_raw(&theta.view(), lambda)?;
        grad += &state.penalty_gradient_raw(&theta.view(), lambda)?;
    }
    if !final_loss.is_finite() || final_loss > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { stepsize: eta, loss: final_loss });
    }
    if iterations == losses.len() {
        // loop exhausted max_iters without an early stop
        losses.push(final_loss);
        if let Some(iters) = iterates.as_mut() {
            iters.push(theta.clone());
        }
    }
    grad_norm = grad.dot(&grad).sqrt().min(grad_norm);

    Ok((
        theta,
        TrainTrace {
            losses,
            iterations,
            final_grad_norm: grad_norm,
            stepsize: eta,
            iterates,
        },
    ))
}

fn default_start(model: &Model, cfg: &TrainConfig) -> ParamVector {
    if model.is_linear_in_params() {
        ParamVector::zeros(model.layout())
    } else {
        model.init_params(derive(cfg.seed, streams::INIT))
    }
}

fn start_from(model: &Model, cfg: &TrainConfig, fallback: ParamVector) -> Result<Array1<f64>> {
    match &cfg.init {
        Some(v) => {
            if v.len() != model.param_count() {
                return Err(invalid("explicit init has wrong length"));
            }
            Ok(v.clone())
        }
        None => Ok(fallback.values().clone()),
    }
}

/// Minimizes the plain task loss. Linear models start from zero, networks
/// from a seeded Gaussian initialization.
pub fn train_first_task(
    model: &Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainTrace)> {
    let obj = Objective::build(model, &[data], cfg.batch)?;
    let theta0 = start_from(model, cfg, default_start(model, cfg))?;
    let (theta, trace) = minimize(&obj, None, theta0, cfg)?;
    Ok((ParamVector::new(theta, model.layout())?, trace))
}

/// Minimizes task loss plus the accumulated penalty at `cfg.lambda`,
/// starting from the penalty anchor.
pub fn train_next_task(
    model: &Model,
    data: &Dataset,
    state: &PenaltyState,
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainTrace)> {
    if state.anchor().len() != model.param_count() {
        return Err(invalid("penalty state dimension differs from the model's"));
    }
    let obj = Objective::build(model, &[data], cfg.batch)?;
    let theta0 = start_from(model, cfg, state.anchor().clone())?;
    let (theta, trace) = minimize(&obj, Some((state, cfg.lambda)), theta0, cfg)?;
    Ok((ParamVector::new(theta, model.layout())?, trace))
}

/// Gradient descent on the summed loss over all datasets (the "all data"
/// baseline).
pub fn joint_train(
    model: &Model,
    datasets: &[&Dataset],
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainTrace)> {
    if datasets.is_empty() {
        return Err(invalid("joint_train requires at least one dataset"));
    }
    let obj = Objective::build(model, datasets, cfg.batch)?;
    let theta0 = start_from(model, cfg, default_start(model, cfg))?;
    let (theta, trace) = minimize(&obj, None, theta0, cfg)?;
    Ok((ParamVector::new(theta, model.layout())?, trace))
}

/// `0.9 / sigma_max(J^T J)` by 100 power iterations on an explicit Jacobian
/// (falls back to 1 for a zero matrix).
pub fn auto_stepsize_for_jacobian(j: &ArrayView2<f64>) -> f64 {
    let jt = j.t();
    let lam = power_method(|v| jt.dot(&j.dot(v)), j.ncols(), POWER_ITERS, 0);
    if lam <= 1e-30 {
        1.0
    } else {
        STEP_SAFETY / lam
    }
}

/// Automatic stepsize for the plain task objective of `model` on `data`.
pub fn auto_stepsize(model: &Model, data: &Dataset) -> Result<f64> {
    let cfg = TrainConfig::default();
    let obj = Objective::build(model, &[data], BatchMode::Full)?;
    let theta0 = default_start(model, &cfg);
    stepsize_for(&obj, None, &theta0.view(), &cfg)
}

/// Pooled argmax accuracy over every provided test set. Ties break toward
/// the smallest class index; the task identity is never used.
pub fn single_head_accuracy(
    model: &Model,
    theta: &ParamVector,
    test_sets: &[&Dataset],
) -> Result<f64> {
    if test_sets.is_empty() || test_sets.iter().all(|d| d.n() == 0) {
        return Err(invalid("single_head_accuracy: empty test pool"));
    }
    let q = model.outputs();
    let mut correct = 0usize;
    let mut total = 0usize;
    for data in test_sets {
        if data.num_classes() == 0 {
            return Err(invalid("single_head_accuracy requires classification datasets"));
        }
        if data.num_classes() != q {
            return Err(invalid(format!(
                "dataset has {} classes, model predicts {q}",
                data.num_classes()
            )));
        }
        let labels = data
            .labels()
            .ok_or_else(|| invalid("classification dataset without labels"))?;
        let x = data.features();
        let mut row = 0;
        while row < x.nrows() {
            let hi = (row + FEATURE_BLOCK).min(x.nrows());
            let pred = model.predict(theta, &x.slice(s![row..hi, ..]))?;
            for (i, p) in pred.rows().into_iter().enumerate() {
                let mut best = 0usize;
                let mut best_v = p[0];
                for c in 1..q {
                    if p[c] > best_v {
                        best_v = p[c];
                        best = c;
                    }
                }
                if best as i64 == labels[row + i] {
                    correct += 1;
                }
            }
            total += hi - row;
            row = hi;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Sufficient statistics of a quadratic task objective for a
/// linear-in-parameter model: `Phi^T Phi`, `Phi^T Y`, `||Y||_F^2`. Summaries
/// are additive across tasks, which makes prefix "all data" baselines cheap.
#[derive(Clone, Debug)]
pub struct LinearTaskSummary {
    pub gram: Array2<f64>,
    pub xty: Array2<f64>,
    pub y_sq: f64,
    pub n: usize,
}

impl LinearTaskSummary {
    pub fn zeros(feature_dim: usize, outputs: usize) -> Self {
        Self {
            gram: Array2::zeros((feature_dim, feature_dim)),
            xty: Array2::zeros((feature_dim, outputs)),
            y_sq: 0.0,
            n: 0,
        }
    }

    /// Accumulates one block of featurized rows and their targets.
    pub fn absorb(&mut self, phi_block: &ArrayView2<f64>, y_block: &ArrayView2<f64>) {
        self.gram += &phi_block.t().dot(phi_block);
        self.xty += &phi_block.t().dot(y_block);
        self.y_sq += y_block.iter().map(|v| v * v).sum::<f64>();
        self.n += phi_block.nrows();
    }

    /// Adds another task's summary (the joint objective of both).
    pub fn add(&mut self, other: &LinearTaskSummary) {
        self.gram += &other.gram;
        self.xty += &other.xty;
        self.y_sq += other.y_sq;
        self.n += other.n;
    }
}

/// Builds the summary of one dataset under the model's feature map.
pub fn linear_task_summary(model: &Model, data: &Dataset) -> Result<LinearTaskSummary> {
    let m = model
        .feature_dim()
        .ok_or_else(|| invalid("linear summaries require a linear-in-parameter model"))?;
    let mut summary = LinearTaskSummary::zeros(m, model.outputs());
    let x = data.features();
    let y = data.targets();
    let mut row = 0;
    while row < x.nrows() {
        let hi = (row + FEATURE_BLOCK).min(x.nrows());
        let phi = model.feature_map(&x.slice(s![row..hi, ..]))?;
        summary.absorb(&phi.view(), &y.slice(s![row..hi, ..]));
        row = hi;
    }
    Ok(summary)
}

/// Full-batch descent on a summarized quadratic objective (plus optional
/// penalty). Starts from `cfg.init`, else the penalty anchor, else zero.
pub fn train_linear_from_summary(
    model: &Model,
    summary: &LinearTaskSummary,
    penalty: Option<(&PenaltyState, f64)>,
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainTrace)> {
    let m = model
        .feature_dim()
        .ok_or_else(|| invalid("linear summaries require a linear-in-parameter model"))?;
    let q = model.outputs();
    if summary.gram.nrows() != m || summary.xty.ncols() != q {
        return Err(invalid("summary shape does not match the model"));
    }
    let obj = Objective::Linear(LinearQuadratic {
        gram: summary.gram.clone(),
        xty: summary.xty.clone(),
        y_sq: summary.y_sq,
        q,
        m,
        n: summary.n,
        rows: None,
    });
    let fallback = match penalty {
        Some((state, _)) => state.anchor().clone(),
        None => ParamVector::zeros(model.layout()),
    };
    let theta0 = start_from(model, cfg, fallback)?;
    let (theta, trace) = minimize(&obj, penalty, theta0, cfg)?;
    Ok((ParamVector::new(theta, model.layout())?, trace))
}

/// Supplies the train/eval data of each task in a sequence. `eval`
/// defaults to the training set.
pub trait TaskProvider {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn train(&self, idx: usize) -> Cow<'_, Dataset>;
    fn eval(&self, idx: usize) -> Cow<'_, Dataset> {
        self.train(idx)
    }
}

/// Tasks already materialized in memory, evaluated on their training data.
pub struct SliceTasks<'a>(pub &'a [Dataset]);

impl TaskProvider for SliceTasks<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn train(&self, idx: usize) -> Cow<'_, Dataset> {
        Cow::Borrowed(&self.0[idx])
    }
}

/// Materialized (train, eval) pairs.
pub struct TrainEvalTasks<'a>(pub &'a [(Dataset, Dataset)]);

impl TaskProvider for TrainEvalTasks<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn train(&self, idx: usize) -> Cow<'_, Dataset> {
        Cow::Borrowed(&self.0[idx].0)
    }
    fn eval(&self, idx: usize) -> Cow<'_, Dataset> {
        Cow::Borrowed(&self.0[idx].1)
    }
}

#[derive(Clone, Debug)]
pub struct SequenceRow {
    pub task_index: usize,
    /// Pooled single-head accuracy over the eval sets of tasks `0..=index`.
    pub accuracy: f64,
    /// Reals held by the penalty representation after this task.
    pub memory_floats: u64,
    pub iterations: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SequenceReport {
    pub variant: Variant,
    pub rows: Vec<SequenceRow>,
    pub final_params: ParamVector,
}

/// Reals held by a penalty state: the anchor plus factors.
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

/// Builds one task's Jacobian factor at `theta`, using the feature-matrix
/// fast path for linear models and blocked explicit Jacobians otherwise.
pub fn build_task_factor(
    model: &Model,
    theta: &ParamVector,
    data: &Dataset,
    variant: Variant,
    seed: u64,
) -> Result<JacobianFactor> {
    let q = model.outputs();
    if model.is_linear_in_params() {
        let m = model.feature_dim().unwrap();
        let x = data.features();
        match variant {
            Variant::L2 => Ok(JacobianFactor::Identity),
            Variant::EwcDiag => {
                let mut acc = StreamingEwcDiag::new(m, q);
                let mut row = 0;
                while row < x.nrows() {
                    let hi = (row + FEATURE_BLOCK).min(x.nrows());
                    let phi = model.feature_map(&x.slice(s![row..hi, ..]))?;
                    acc.absorb(&phi.view());
                    row = hi;
                }
                Ok(JacobianFactor::Diag(acc.finish()))
            }
            Variant::Sketch(s) => {
                let mut acc = StreamingSketch::new(s, m, q, seed)?;
                let mut row = 0;
                while row < x.nrows() {
                    let hi = (row + FEATURE_BLOCK).min(x.nrows());
                    let phi = model.feature_map(&x.slice(s![row..hi, ..]))?;
                    acc.absorb(&phi.view())?;
                    row = hi;
                }
                Ok(JacobianFactor::Dense(acc.finish()))
            }
            Variant::Full => {
                let j = model.jacobian(theta, &x.view())?;
                build_approx_jacobian(variant, &j.view(), seed)
            }
        }
    } else {
        match variant {
            Variant::L2 => Ok(JacobianFactor::Identity),
            _ => {
                let x = data.features();
                let p = model.param_count();
                // keep per-block jacobians near 256 MB
                let block = ((256usize << 20) / 8 / (q * p)).clamp(1, FEATURE_BLOCK);
                match variant {
                    Variant::Full => {
                        let j = model.jacobian(theta, &x.view())?;
                        build_approx_jacobian(variant, &j.view(), seed)
                    }
                    Variant::EwcDiag => {
                        let mut sumsq = Array1::<f64>::zeros(p);
                        let mut row = 0;
                        while row < x.nrows() {
                            let hi = (row + block).min(x.nrows());
                            let j = model.jacobian(theta, &x.slice(s![row..hi, ..]))?;
                            for r in j.rows() {
                                for (jj, v) in r.iter().enumerate() {
                                    sumsq[jj] += v * v;
                                }
                            }
                            row = hi;
                        }
                        Ok(JacobianFactor::Diag(sumsq.mapv(f64::sqrt)))
                    }
                    Variant::Sketch(s) => {
                        let mut k = Array2::<f64>::zeros((s, p));
                        let mut row = 0;
                        while row < x.nrows() {
                            let hi = (row + block).min(x.nrows());
                            let j = model.jacobian(theta, &x.slice(s![row..hi, ..]))?;
                            let s_blk = crate::regularizers::sketch_columns_at(
                                s,
                                seed,
                                row * q,
                                (hi - row) * q,
                            );
                            k += &s_blk.dot(&j);
                            row = hi;
                        }
                        Ok(JacobianFactor::Dense(k))
                    }
                    Variant::L2 => unreachable!(),
                }
            }
        }
    }
}

/// Sequential training over all tasks with the chosen penalty variant:
/// train, absorb the task's Jacobian factor at the new minimizer, evaluate
/// pooled accuracy over everything seen, and record the penalty's memory
/// footprint.
pub fn run_sequence(
    model: &Model,
    tasks: &dyn TaskProvider,
    variant: Variant,
    cfg: &TrainConfig,
) -> Result<SequenceReport> {
    if tasks.is_empty() {
        return Err(invalid("run_sequence requires at least one task"));
    }
    let mut state: Option<PenaltyState> = None;
    let mut rows = Vec::with_capacity(tasks.len());
    let mut theta = ParamVector::zeros(model.layout());
    for t in 0..tasks.len() {
        let data = tasks.train(t);
        let (theta_new, trace) = match &state {
            None => train_first_task(model, &data, cfg)?,
            Some(st) => train_next_task(model, &data, st, cfg)?,
        };
        theta = theta_new;
        let sketch_seed = derive2(cfg.seed, streams::SKETCH, t as u64);
        let factor = build_task_factor(model, &theta, &data, variant, sketch_seed)?;
        drop(data);
        state = Some(match state.take() {
            None => PenaltyState::new(variant, theta.clone()).accumulate(factor, theta.clone())?,
            Some(st) => st.accumulate(factor, theta.clone())?,
        });
        let evals: Vec<Cow<'_, Dataset>> = (0..=t).map(|i| tasks.eval(i)).collect();
        let eval_refs: Vec<&Dataset> = evals.iter().map(|c| c.as_ref()).collect();
        let accuracy = single_head_accuracy(model, &theta, &eval_refs)?;
        rows.push(SequenceRow {
            task_index: t,
            accuracy,
            memory_floats: stored_floats(state.as_ref().unwrap()),
            iterations: trace.iterations,
            final_loss: *trace.losses.last().unwrap(),
            final_grad_norm: trace.final_grad_norm,
        });
    }
    Ok(SequenceReport { variant, rows, final_params: theta })
}
