//! Quadratic penalties built from approximate Jacobians.
//!
//! Four approximations of a task Jacobian `J` (rows = stacked per-example,
//! per-output gradients) are supported:
//!
//! * **Full** — keep `J` as-is;
//! * **Sketch(s)** — `S J` with `S` an `s x rows` Gaussian matrix with iid
//!   `N(0, 1/s)` entries;
//! * **EwcDiag** — the vector `k_j = sqrt(sum_i J_ij^2)`, the square root of
//!   the diagonal of `J^T J`;
//! * **L2** — the identity (no per-task storage).
//!
//! Accumulated across tasks these define the penalty
//! `(lambda/2) * sum_T || K_T G (theta - anchor) ||^2`, where `G` is the
//! diagonal matrix of per-group scale square roots (scales default to 1 and
//! live in parameter space, as in the plain-L2 special case
//! `(lambda/2) * count * || G (theta - anchor) ||^2`).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::linalg::ensure_finite;
use crate::models::ParamVector;
use crate::rng::{derive, normal_at};

/// Which Jacobian approximation a penalty uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    Sketch(usize),
    EwcDiag,
    L2,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Full => "full".to_string(),
            Variant::Sketch(s) => format!("rsj-{s}"),
            Variant::EwcDiag => "ewc".to_string(),
            Variant::L2 => "l2".to_string(),
        }
    }
}

/// Gaussian random projection with iid `N(0, 1/s)` entries.
///
/// Entry `(i, j)` is `normal_at(derive(seed, i), j) / sqrt(s)`: each row is
/// its own counter-based stream, so any column range of any row can be
/// regenerated independently (see [`sketch_columns_at`]).
#[derive(Clone, Debug)]
pub struct SketchMatrix {
    entries: Array2<f64>,
    seed: u64,
}

impl SketchMatrix {
    pub fn gaussian(s: usize, cols: usize, seed: u64) -> Self {
        let inv = 1.0 / (s as f64).sqrt();
        let mut entries = Array2::<f64>::zeros((s, cols));
        entries
            .rows_mut()
            .into_iter()
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .for_each(|(i, mut row)| {
                let row_seed = derive(seed, i as u64);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = normal_at(row_seed, j as u64) * inv;
                }
            });
        Self { entries, seed }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }
}

/// Columns `[col0, col0 + len)` of the sketch matrix `(s, seed)` without
/// materializing the rest; bitwise identical to the same slice of
/// [`SketchMatrix::gaussian`].
pub fn sketch_columns_at(s: usize, seed: u64, col0: usize, len: usize) -> Array2<f64> {
    let inv = 1.0 / (s as f64).sqrt();
    let mut block = Array2::<f64>::zeros((s, len));
    block
        .rows_mut()
        .into_iter()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .for_each(|(i, mut row)| {
            let row_seed = derive(seed, i as u64);
            for (j, v) in row.iter_mut().enumerate() {
                *v = normal_at(row_seed, (col0 + j) as u64) * inv;
            }
        });
    block
}

/// One task's stored Jacobian approximation.
#[derive(Clone, Debug)]
pub enum JacobianFactor {
    /// Full or sketched Jacobian, `rows x p`.
    Dense(Array2<f64>),
    /// Square root of `diag(J^T J)`, length `p`.
    Diag(Array1<f64>),
    /// Identity marker (L2).
    Identity,
}

impl JacobianFactor {
    pub fn stored_rows(&self) -> usize {
        match self {
            JacobianFactor::Dense(k) => k.nrows(),
            JacobianFactor::Diag(_) => 1,
            JacobianFactor::Identity => 0,
        }
    }
}

/// Builds the approximation `K` of a task Jacobian for the given variant.
/// The seed is only used by `Sketch`.
pub fn build_approx_jacobian(
    variant: Variant,
    j: &ArrayView2<f64>,
    seed: u64,
) -> Result<JacobianFactor> {
    ensure_finite(j, "jacobian")?;
    match variant {
        Variant::Full => Ok(JacobianFactor::Dense(j.to_owned())),
        Variant::Sketch(s) => {
            if s == 0 {
                return Err(invalid("sketch dimension s must be >= 1"));
            }
            let sketch = SketchMatrix::gaussian(s, j.nrows(), seed);
            Ok(JacobianFactor::Dense(sketch.entries().dot(j)))
        }
        Variant::EwcDiag => {
            let mut d = Array1::<f64>::zeros(j.ncols());
            for row in j.rows() {
                for (jj, v) in row.iter().enumerate() {
                    d[jj] += v * v;
                }
            }
            d.mapv_inplace(f64::sqrt);
            Ok(JacobianFactor::Diag(d))
        }
        Variant::L2 => Ok(JacobianFactor::Identity),
    }
}

/// Accumulated quadratic penalty: per-task factors (or a running diagonal /
/// task count), the anchor parameter, and per-group scales.
#[derive(Clone, Debug)]
pub struct PenaltyState {
    variant: Variant,
    factors: Vec<Array2<f64>>,
    diag: Array1<f64>,
    count: usize,
    anchor: ParamVector,
    scale_sqrt: Array1<f64>,
}

impl PenaltyState {
    /// Empty state around an anchor; group scales default to 1.
    pub fn new(variant: Variant, anchor: ParamVector) -> Self {
        let p = anchor.len();
        Self {
            variant,
            factors: Vec::new(),
            diag: Array1::zeros(p),
            count: 0,
            anchor,
            scale_sqrt: Array1::ones(p),
        }
    }

    /// Sets the multiplier of one parameter group (by layout name).
    pub fn set_group_scale(&mut self, group: &str, scale: f64) -> Result<()> {
        if !(scale > 0.0) {
            return Err(invalid(format!("group scale for '{group}' must be positive")));
        }
        let spec = self
            .anchor
            .group(group)
            .ok_or_else(|| invalid(format!("unknown parameter group '{group}'")))?
            .clone();
        let sq = scale.sqrt();
        self.scale_sqrt
            .slice_mut(s![spec.offset..spec.offset + spec.len])
            .fill(sq);
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn anchor(&self) -> &ParamVector {
        &self.anchor
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn accumulated_diag(&self) -> &Array1<f64> {
        &self.diag
    }

    /// Number of tasks absorbed so far.
    pub fn task_count(&self) -> usize {
        match self.variant {
            Variant::Full | Variant::Sketch(_) => self.factors.len(),
            Variant::EwcDiag | Variant::L2 => self.count,
        }
    }

    /// Extends the penalty with one task's factor and moves the anchor to
    /// the new minimizer. Returns the extended state; `self` is unchanged.
    pub fn accumulate(&self, k: JacobianFactor, new_anchor: ParamVector) -> Result<PenaltyState> {
        let p = self.anchor.len();
        if new_anchor.len() != p {
            return Err(invalid("new anchor length differs from state dimension"));
        }
        let mut next = self.clone();
        next.anchor = new_anchor;
        match (self.variant, k) {
            (Variant::Full, JacobianFactor::Dense(m)) | (Variant::Sketch(_), JacobianFactor::Dense(m)) => {
                if m.ncols() != p {
                    return Err(invalid(format!(
                        "factor has {} columns, expected {p}",
                        m.ncols()
                    )));
                }
                next.factors.push(m);
            }
            (Variant::EwcDiag, JacobianFactor::Diag(d)) => {
                if d.len() != p {
                    return Err(invalid(format!("diagonal has length {}, expected {p}", d.len())));
                }
                if d.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(invalid("diagonal entries must be finite and nonnegative"));
                }
                next.diag = &next.diag + &d.mapv(|v| v * v);
                next.count += 1;
            }
            (Variant::L2, JacobianFactor::Identity) => {
                next.count += 1;
            }
            (variant, factor) => {
                return Err(invalid(format!(
                    "factor kind {factor:?} does not match penalty variant {variant:?}"
                )));
            }
        }
        Ok(next)
    }

    fn check_eval(&self, theta: &ArrayView1<f64>, lambda: f64) -> Result<()> {
        if theta.len() != self.anchor.len() {
            return Err(invalid("theta length differs from penalty dimension"));
        }
        if lambda < 0.0 {
            return Err(invalid("lambda must be nonnegative"));
        }
        Ok(())
    }

    /// Scaled displacement `G (theta - anchor)`.
    fn scaled_displacement(&self, theta: &ArrayView1<f64>) -> Array1<f64> {
        let mut w = theta - self.anchor.values();
        w *= &self.scale_sqrt;
        w
    }

    /// `(lambda/2) * sum_T || K_T G (theta - anchor) ||^2`.
    pub fn penalty_value(&self, theta: &ParamVector, lambda: f64) -> Result<f64> {
        self.penalty_value_raw(&theta.view(), lambda)
    }

    pub fn penalty_value_raw(&self, theta: &ArrayView1<f64>, lambda: f64) -> Result<f64> {
        self.check_eval(theta, lambda)?;
        let w = self.scaled_displacement(theta);
        let mut acc = 0.0;
        match self.variant {
            Variant::Full | Variant::Sketch(_) => {
                for k in &self.factors {
                    let kw = k.dot(&w);
                    acc += kw.dot(&kw);
                }
            }
            Variant::EwcDiag => {
                acc = w.iter().zip(self.diag.iter()).map(|(wi, di)| di * wi * wi).sum();
            }
            Variant::L2 => {
                acc = self.count as f64 * w.dot(&w);
            }
        }
        Ok(0.5 * lambda * acc)
    }

    /// Gradient of [`Self::penalty_value`] with respect to `theta`.
    pub fn penalty_gradient(&self, theta: &ParamVector, lambda: f64) -> Result<ParamVector> {
        let g = self.penalty_gradient_raw(&theta.view(), lambda)?;
        theta.with_values(g)
    }

    pub fn penalty_gradient_raw(
        &self,
        theta: &ArrayView1<f64>,
        lambda: f64,
    ) -> Result<Array1<f64>> {
        self.check_eval(theta, lambda)?;
        let w = self.scaled_displacement(theta);
        let mut g = Array1::<f64>::zeros(w.len());
        match self.variant {
            Variant::Full | Variant::Sketch(_) => {
                for k in &self.factors {
                    let kw = k.dot(&w);
                    g += &k.t().dot(&kw);
                }
            }
            Variant::EwcDiag => {
                g = &w * &self.diag;
            }
            Variant::L2 => {
                g = w.mapv(|v| v * self.count as f64);
            }
        }
        g *= &self.scale_sqrt;
        g.mapv_inplace(|v| v * lambda);
        Ok(g)
    }

    /// Hessian-vector product of the penalty (used for stepsize bounds).
    pub fn hessian_matvec(&self, v: &ArrayView1<f64>, lambda: f64) -> Array1<f64> {
        let mut w = v.to_owned();
        w *= &self.scale_sqrt;
        let mut g = Array1::<f64>::zeros(w.len());
        match self.variant {
            Variant::Full | Variant::Sketch(_) => {
                for k in &self.factors {
                    let kw = k.dot(&w);
                    g += &k.t().dot(&kw);
                }
            }
            Variant::EwcDiag => {
                g = &w * &self.diag;
            }
            Variant::L2 => {
                g = w.mapv(|x| x * self.count as f64);
            }
        }
        g *= &self.scale_sqrt;
        g.mapv_inplace(|x| x * lambda);
        g
    }
}

/// Stored-real count of each variant after `tasks` tasks: anchor plus the
/// per-task factors (`n` Jacobian rows for Full, `s` sketch rows), the
/// running diagonal for EWC, or nothing beyond the anchor for L2.
pub fn memory_cost(variant: Variant, p: u64, tasks: u64, n: u64, s: u64) -> u64 {
    match variant {
        Variant::Full => p * (1 + tasks * n),
        Variant::Sketch(_) => p * (1 + tasks * s),
        Variant::EwcDiag => 2 * p,
        Variant::L2 => p,
    }
}

/// Sketch factor `S J` of a linear-in-parameter classifier, computed from
/// its feature matrix without materializing the stacked Jacobian.
///
/// With `q` outputs and class-major parameters, the stacked Jacobian row
/// `(i, c)` is `e_c (x) phi(x_i)`, so block `c` of `S J` is `S_c Phi` where
/// `S_c` collects the sketch columns `i*q + c`.
pub fn sketch_factor_from_features(
    phi: &ArrayView2<f64>,
    outputs: usize,
    s: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let mut acc = StreamingSketch::new(s, phi.ncols(), outputs, seed)?;
    acc.absorb(phi)?;
    Ok(acc.finish())
}

/// Blockwise builder behind [`sketch_factor_from_features`]; feed feature
/// rows in example order.
pub struct StreamingSketch {
    k: Array2<f64>,
    s: usize,
    q: usize,
    seed: u64,
    rows_seen: usize,
}

impl StreamingSketch {
    pub fn new(s: usize, feature_dim: usize, outputs: usize, seed: u64) -> Result<Self> {
        if s == 0 || outputs == 0 {
            return Err(invalid("sketch dimension and outputs must be >= 1"));
        }
        Ok(Self {
            k: Array2::zeros((s, feature_dim * outputs)),
            s,
            q: outputs,
            seed,
            rows_seen: 0,
        })
    }

    pub fn absorb(&mut self, phi_block: &ArrayView2<f64>) -> Result<()> {
        ensure_finite(phi_block, "feature block")?;
        let b = phi_block.nrows();
        let m = self.k.ncols() / self.q;
        if phi_block.ncols() != m {
            return Err(invalid("feature block width mismatch"));
        }
        let inv = 1.0 / (self.s as f64).sqrt();
        for c in 0..self.q {
            // S_c over this block: entry (sigma, i) = S[sigma, (rows_seen+i)*q + c]
            let mut s_c = Array2::<f64>::zeros((self.s, b));
            s_c.rows_mut()
                .into_iter()
                .enumerate()
                .collect::<Vec<_>>()
                .into_par_iter()
                .for_each(|(sigma, mut row)| {
                    let row_seed = derive(self.seed, sigma as u64);
                    for (i, v) in row.iter_mut().enumerate() {
                        let col = ((self.rows_seen + i) * self.q + c) as u64;
                        *v = normal_at(row_seed, col) * inv;
                    }
                });
            let prod = s_c.dot(phi_block);
            let mut block = self.k.slice_mut(s![.., c * m..(c + 1) * m]);
            block += &prod;
        }
        self.rows_seen += b;
        Ok(())
    }

    pub fn finish(self) -> Array2<f64> {
        self.k
    }
}

/// EWC diagonal of a linear-in-parameter classifier from its feature
/// matrix: per output block, `sqrt` of the feature column sums of squares.
pub struct StreamingEwcDiag {
    sumsq: Array1<f64>,
    q: usize,
}

impl StreamingEwcDiag {
    pub fn new(feature_dim: usize, outputs: usize) -> Self {
        Self { sumsq: Array1::zeros(feature_dim), q: outputs }
    }

    pub fn absorb(&mut self, phi_block: &ArrayView2<f64>) {
        for row in phi_block.rows() {
            for (j, v) in row.iter().enumerate() {
                self.sumsq[j] += v * v;
            }
        }
    }

    pub fn finish(self) -> Array1<f64> {
        let m = self.sumsq.len();
        let mut d = Array1::<f64>::zeros(m * self.q);
        let root = self.sumsq.mapv(f64::sqrt);
        for c in 0..self.q {
            d.slice_mut(s![c * m..(c + 1) * m]).assign(&root);
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Model, ParamVector};
    use crate::rng::SplitMix64;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn anchor(values: Array1<f64>) -> ParamVector {
        ParamVector::single_group("weights", values).unwrap()
    }

    #[test]
    fn ewc_diag_hand_value() {
        // J = [[1,2],[3,4]] -> k = (sqrt(10), sqrt(20))
        let j = array![[1.0, 2.0], [3.0, 4.0]];
        match build_approx_jacobian(Variant::EwcDiag, &j.view(), 0).unwrap() {
            JacobianFactor::Diag(d) => {
                assert_relative_eq!(d[0], 10.0f64.sqrt(), epsilon = 1e-15);
                assert_relative_eq!(d[1], 20.0f64.sqrt(), epsilon = 1e-15);
            }
            other => panic!("expected diagonal, got {other:?}"),
        }
    }

    #[test]
    fn full_factor_is_bitwise_copy() {
        let j = array![[1.5, -2.25], [0.125, 4.0]];
        match build_approx_jacobian(Variant::Full, &j.view(), 0).unwrap() {
            JacobianFactor::Dense(k) => assert_eq!(k, j),
            other => panic!("expected dense, got {other:?}"),
        }
    }

    #[test]
    fn sketch_of_zero_is_zero() {
        let j = Array2::<f64>::zeros((6, 3));
        match build_approx_jacobian(Variant::Sketch(4), &j.view(), 7).unwrap() {
            JacobianFactor::Dense(k) => {
                assert_eq!(k.shape(), &[4, 3]);
                assert!(k.iter().all(|&v| v == 0.0));
            }
            other => panic!("expected dense, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_jacobian_rejected() {
        let j = array![[1.0, f64::NAN]];
        assert!(build_approx_jacobian(Variant::Full, &j.view(), 0).is_err());
    }

    #[test]
    fn sketch_moments() {
        let s = SketchMatrix::gaussian(40, 60, 123);
        let e = s.entries();
        let n = e.len() as f64;
        let mean = e.sum() / n;
        let var = e.iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert_relative_eq!(var, 1.0 / 40.0, max_relative = 0.2);
    }

    #[test]
    fn sketch_columns_match_full_matrix() {
        let s = SketchMatrix::gaussian(5, 30, 99);
        let block = sketch_columns_at(5, 99, 10, 7);
        for i in 0..5 {
            for j in 0..7 {
                assert_eq!(block[[i, j]].to_bits(), s.entries()[[i, 10 + j]].to_bits());
            }
        }
    }

    #[test]
    fn accumulate_single_full_factor() {
        let j = array![[1.0, 0.0], [0.0, 1.0]];
        let state = PenaltyState::new(Variant::Full, anchor(array![0.0, 0.0]));
        let k = build_approx_jacobian(Variant::Full, &j.view(), 0).unwrap();
        let state = state.accumulate(k, anchor(array![0.0, 0.0])).unwrap();
        // K = I2, lambda = 1, displacement (1,1) -> 1/2 * 2 = 1
        let theta = anchor(array![1.0, 1.0]);
        assert_relative_eq!(state.penalty_value(&theta, 1.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn accumulate_ewc_diag_elementwise() {
        // diag1 = (1,4) from k=(1,2); new k=(2,0) -> accumulated (5,4)
        let state = PenaltyState::new(Variant::EwcDiag, anchor(array![0.0, 0.0]));
        let state = state
            .accumulate(JacobianFactor::Diag(array![1.0, 2.0]), anchor(array![0.0, 0.0]))
            .unwrap();
        let state = state
            .accumulate(JacobianFactor::Diag(array![2.0, 0.0]), anchor(array![0.0, 0.0]))
            .unwrap();
        assert_eq!(state.accumulated_diag(), &array![5.0, 4.0]);
    }

    #[test]
    fn accumulate_l2_counts() {
        let state = PenaltyState::new(Variant::L2, anchor(array![0.0, 0.0]));
        let state = state
            .accumulate(JacobianFactor::Identity, anchor(array![0.0, 0.0]))
            .unwrap();
        let state = state
            .accumulate(JacobianFactor::Identity, anchor(array![0.0, 0.0]))
            .unwrap();
        assert_eq!(state.task_count(), 2);
        // quadratic form = 2 I: value at displacement e1, lambda=1 -> (1/2)*2*1
        let theta = anchor(array![1.0, 0.0]);
        assert_relative_eq!(state.penalty_value(&theta, 1.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn variant_factor_mismatch_rejected() {
        let state = PenaltyState::new(Variant::L2, anchor(array![0.0]));
        let err = state.accumulate(JacobianFactor::Diag(array![1.0]), anchor(array![0.0]));
        assert!(err.is_err());
    }

    #[test]
    fn penalty_zero_at_anchor_for_all_variants() {
        let a = array![0.3, -1.2, 0.7];
        let j = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]];
        for variant in [Variant::Full, Variant::Sketch(3), Variant::EwcDiag, Variant::L2] {
            let k = build_approx_jacobian(variant, &j.view(), 5).unwrap();
            let state = PenaltyState::new(variant, anchor(a.clone()))
                .accumulate(k, anchor(a.clone()))
                .unwrap();
            let v = state.penalty_value(&anchor(a.clone()), 2.0).unwrap();
            assert_eq!(v, 0.0);
            let g = state.penalty_gradient(&anchor(a.clone()), 2.0).unwrap();
            assert!(g.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn l2_example_values() {
        // count=1, scales=1, lambda=2, theta-anchor=(3,4) -> (2/2)*(9+16) = 25
        let state = PenaltyState::new(Variant::L2, anchor(array![0.0, 0.0]))
            .accumulate(JacobianFactor::Identity, anchor(array![0.0, 0.0]))
            .unwrap();
        let v = state.penalty_value(&anchor(array![3.0, 4.0]), 2.0).unwrap();
        assert_relative_eq!(v, 25.0, epsilon = 1e-12);
        // gradient with lambda=1 is exactly the displacement
        let g = state.penalty_gradient(&anchor(array![3.0, 4.0]), 1.0).unwrap();
        assert_eq!(g.values(), &array![3.0, 4.0]);
    }

    #[test]
    fn lambda_must_be_nonnegative() {
        let state = PenaltyState::new(Variant::L2, anchor(array![0.0]));
        assert!(state.penalty_value(&anchor(array![1.0]), -1.0).is_err());
    }

    #[test]
    fn penalty_zero_on_null_space_vector() {
        // J = [1 1] has null vector (1, -1).
        let j = array![[1.0, 1.0]];
        let a = array![0.0, 0.0];
        let k = build_approx_jacobian(Variant::Full, &j.view(), 0).unwrap();
        let state = PenaltyState::new(Variant::Full, anchor(a.clone()))
            .accumulate(k, anchor(a))
            .unwrap();
        let null = anchor(array![1.0, -1.0]);
        assert!(state.penalty_value(&null, 1.0).unwrap().abs() < 1e-15);
        let off = anchor(array![1.0, 1.0]);
        assert!(state.penalty_value(&off, 1.0).unwrap() > 0.1);
    }

    #[test]
    fn gradient_matches_finite_differences_all_variants() {
        let mut rng = SplitMix64::new(17);
        let p = 6;
        let j = Array2::from_shape_fn((8, p), |_| rng.next_normal());
        let a = Array1::from_iter((0..p).map(|_| rng.next_normal()));
        let theta = Array1::from_iter((0..p).map(|_| rng.next_normal()));
        for variant in [Variant::Full, Variant::Sketch(4), Variant::EwcDiag, Variant::L2] {
            let k = build_approx_jacobian(variant, &j.view(), 3).unwrap();
            let mut state = PenaltyState::new(variant, anchor(a.clone()))
                .accumulate(k, anchor(a.clone()))
                .unwrap();
            state.set_group_scale("weights", 1.7).unwrap();
            let lambda = 0.8;
            let g = state
                .penalty_gradient(&anchor(theta.clone()), lambda)
                .unwrap();
            let h = 1e-6;
            for idx in 0..p {
                let mut tp = theta.clone();
                tp[idx] += h;
                let mut tm = theta.clone();
                tm[idx] -= h;
                let fp = state.penalty_value(&anchor(tp), lambda).unwrap();
                let fm = state.penalty_value(&anchor(tm), lambda).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let scale = g.values()[idx].abs().max(1.0);
                assert!(
                    (fd - g.values()[idx]).abs() / scale < 1e-6,
                    "{variant:?} index {idx}: fd {fd} vs grad {}",
                    g.values()[idx]
                );
            }
        }
    }

    #[test]
    fn ewc_diag_penalty_equals_weighted_square_form() {
        let mut rng = SplitMix64::new(31);
        let p = 5;
        let j = Array2::from_shape_fn((9, p), |_| rng.next_normal());
        let a = Array1::from_iter((0..p).map(|_| rng.next_normal()));
        let theta = Array1::from_iter((0..p).map(|_| rng.next_normal()));
        let lambda = 1.3;
        let k = build_approx_jacobian(Variant::EwcDiag, &j.view(), 0).unwrap();
        let state = PenaltyState::new(Variant::EwcDiag, anchor(a.clone()))
            .accumulate(k, anchor(a.clone()))
            .unwrap();
        let got = state.penalty_value(&anchor(theta.clone()), lambda).unwrap();
        let jtj = j.t().dot(&j);
        let mut expect = 0.0;
        for idx in 0..p {
            let d = jtj[[idx, idx]];
            let diff = theta[idx] - a[idx];
            expect += d * diff * diff;
        }
        expect *= 0.5 * lambda;
        assert_relative_eq!(got, expect, max_relative = 1e-10);
    }

    #[test]
    fn sketch_unbiasedness_over_repeats() {
        // mean of K^T K over 2000 sketches stays within 5% of J^T J.
        let mut rng = SplitMix64::new(77);
        let j = Array2::from_shape_fn((20, 8), |_| rng.next_normal());
        let jtj = j.t().dot(&j);
        let mut acc = Array2::<f64>::zeros((8, 8));
        let reps = 2000;
        for r in 0..reps {
            let k = match build_approx_jacobian(Variant::Sketch(4), &j.view(), 1000 + r).unwrap() {
                JacobianFactor::Dense(k) => k,
                _ => unreachable!(),
            };
            acc += &k.t().dot(&k);
        }
        acc.mapv_inplace(|v| v / reps as f64);
        let err = crate::linalg::frobenius(&(&acc - &jtj).view());
        let base = crate::linalg::frobenius(&jtj.view());
        assert!(err / base < 0.05, "relative deviation {}", err / base);
    }

    #[test]
    fn memory_cost_paper_values() {
        assert_eq!(memory_cost(Variant::Full, 10, 3, 5, 0), 160);
        assert_eq!(memory_cost(Variant::Sketch(2), 10, 3, 0, 2), 70);
        assert_eq!(memory_cost(Variant::EwcDiag, 10, 1, 1, 1), 20);
        assert_eq!(memory_cost(Variant::L2, 10, 1, 1, 1), 10);
    }

    #[test]
    fn streaming_sketch_matches_dense_path() {
        let q = 3;
        let m = 4;
        let n = 10;
        let s = 5;
        let seed = 42;
        let model = Model::random_relu_features(m, 2, q, 1);
        let mut rng = SplitMix64::new(2);
        let x = Array2::from_shape_fn((n, 2), |_| rng.next_normal());
        let phi = model.feature_map(&x.view()).unwrap();
        let theta = ParamVector::zeros(model.layout());
        let j = model.jacobian(&theta, &x.view()).unwrap();
        let dense = match build_approx_jacobian(Variant::Sketch(s), &j.view(), seed).unwrap() {
            JacobianFactor::Dense(k) => k,
            _ => unreachable!(),
        };
        // one shot
        let fast = sketch_factor_from_features(&phi.view(), q, s, seed).unwrap();
        let err = (&fast - &dense).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "one-shot error {err}");
        // two blocks
        let mut acc = StreamingSketch::new(s, m, q, seed).unwrap();
        acc.absorb(&phi.slice(s![0..6, ..])).unwrap();
        acc.absorb(&phi.slice(s![6.., ..])).unwrap();
        let blocked = acc.finish();
        let err = (&blocked - &dense).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "blocked error {err}");
    }

    #[test]
    fn streaming_ewc_diag_matches_dense_path() {
        let q = 2;
        let m = 3;
        let model = Model::random_relu_features(m, 2, q, 9);
        let mut rng = SplitMix64::new(4);
        let x = Array2::from_shape_fn((7, 2), |_| rng.next_normal());
        let phi = model.feature_map(&x.view()).unwrap();
        let theta = ParamVector::zeros(model.layout());
        let j = model.jacobian(&theta, &x.view()).unwrap();
        let dense = match build_approx_jacobian(Variant::EwcDiag, &j.view(), 0).unwrap() {
            JacobianFactor::Diag(d) => d,
            _ => unreachable!(),
        };
        let mut acc = StreamingEwcDiag::new(m, q);
        acc.absorb(&phi.slice(s![0..4, ..]));
        acc.absorb(&phi.slice(s![4.., ..]));
        let fast = acc.finish();
        let err = (&fast - &dense).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "diag error {err}");
    }
}
