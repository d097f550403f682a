//! Model families, their parameter/quadratic-loss plumbing, and the
//! analytic two-layer ReLU tangent-kernel Gram matrix.
//!
//! Three families are supported:
//! * [`Model::Linear`] — `f_c(x) = <x, theta_c>`, the identity feature map;
//! * [`Model::RandomReluFeatures`] — `f_c(x) = <relu(W x), theta_c>` with a
//!   fixed random `W`; linear in the parameters;
//! * [`Model::TwoLayerRelu`] — a two-layer ReLU network, in either the
//!   "experimental" configuration (biases, both layers trained) or the
//!   "theoretical" one (no bias, fixed +-1 second layer, `1/sqrt(k)` output
//!   scaling, first layer trained).
//!
//! Stacked Jacobians and predictions use row order `(example, output) ->
//! example * q + output`; parameters of the linear families use class-major
//! blocks `theta[c * m + j]`.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, Result};
use crate::rng::SplitMix64;

/// One named contiguous segment of the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

pub type Layout = Arc<Vec<GroupSpec>>;

pub fn single_group_layout(name: &str, len: usize) -> Layout {
    Arc::new(vec![GroupSpec { name: name.to_string(), offset: 0, len }])
}

fn validate_layout(layout: &[GroupSpec], p: usize) -> Result<()> {
    let mut cursor = 0usize;
    for g in layout {
        if g.offset != cursor {
            return Err(invalid(format!(
                "parameter group '{}' starts at {} but previous groups end at {}",
                g.name, g.offset, cursor
            )));
        }
        if g.len == 0 {
            return Err(invalid(format!("parameter group '{}' is empty", g.name)));
        }
        cursor += g.len;
    }
    if cursor != p {
        return Err(invalid(format!(
            "parameter groups cover [0, {cursor}) but the vector has length {p}"
        )));
    }
    Ok(())
}

/// Flat model parameter with a named group layout.
#[derive(Clone, Debug)]
pub struct ParamVector {
    values: Array1<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Array1<f64>, layout: Layout) -> Result<Self> {
        validate_layout(&layout, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameter vector contains non-finite values"));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let p: usize = layout.iter().map(|g| g.len).sum();
        Self { values: Array1::zeros(p), layout }
    }

    pub fn single_group(name: &str, values: Array1<f64>) -> Result<Self> {
        let layout = single_group_layout(name, values.len());
        Self::new(values, layout)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn group(&self, name: &str) -> Option<&GroupSpec> {
        self.layout.iter().find(|g| g.name == name)
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Array1<f64>) -> Result<Self> {
        Self::new(values, Arc::clone(&self.layout))
    }
}

/// Feature matrix plus targets for one task.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array2<f64>,
    labels: Option<Vec<i64>>,
    num_classes: usize,
}

impl Dataset {
    /// Regression data with a single real target per example.
    pub fn regression(features: Array2<f64>, targets: Array1<f64>) -> Result<Self> {
        let n = features.nrows();
        let t = targets.insert_axis(Axis(1));
        Self::from_parts(features, t, None, 0).and_then(|d| {
            if n == 0 {
                Err(invalid("dataset must have at least one example"))
            } else {
                Ok(d)
            }
        })
    }

    /// Classification data; builds one-hot targets over `num_classes`.
    pub fn classification(
        features: Array2<f64>,
        labels: Vec<i64>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(invalid(format!("{} labels for {} examples", labels.len(), n)));
        }
        if num_classes == 0 {
            return Err(invalid("classification requires num_classes >= 1"));
        }
        let mut targets = Array2::<f64>::zeros((n, num_classes));
        for (i, &lab) in labels.iter().enumerate() {
            if lab < 0 || lab as usize >= num_classes {
                return Err(invalid(format!(
                    "label {lab} out of range for {num_classes} classes"
                )));
            }
            targets[[i, lab as usize]] = 1.0;
        }
        Self::from_parts(features, targets, Some(labels), num_classes)
    }

    /// General constructor. When `num_classes > 0` the target rows must be
    /// one-hot (sum to 1).
    pub fn from_parts(
        features: Array2<f64>,
        targets: Array2<f64>,
        labels: Option<Vec<i64>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 || features.ncols() == 0 {
            return Err(invalid("dataset must have n >= 1 examples and d >= 1 features"));
        }
        if targets.nrows() != n {
            return Err(invalid(format!(
                "targets have {} rows for {} examples",
                targets.nrows(),
                n
            )));
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(invalid("label vector length differs from example count"));
            }
        }
        if num_classes > 0 {
            if targets.ncols() != num_classes {
                return Err(invalid("one-hot targets must have num_classes columns"));
            }
            for (i, row) in targets.rows().into_iter().enumerate() {
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("one-hot row {i} sums to {sum}, expected 1")));
                }
            }
        }
        Ok(Self { features, targets, labels, num_classes })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of target columns (1 for regression, Q for one-hot).
    pub fn outputs(&self) -> usize {
        self.targets.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Row subset, preserving target/label structure.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("select: empty index set"));
        }
        let features = self.features.select(Axis(0), indices);
        let targets = self.targets.select(Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::from_parts(features, targets, labels, self.num_classes)
    }
}

/// Second-layer configuration of the two-layer network.
#[derive(Clone, Debug)]
pub enum TwoLayerArch {
    /// Biases in both layers, both layers trainable. Gaussian init with
    /// per-layer scale `1/sqrt(fan_in)`, biases start at zero.
    Experimental,
    /// No biases, fixed second layer with k/2 entries +1 then k/2 entries
    /// -1, output scaled by `1/sqrt(k)`, first layer trainable. Gaussian
    /// init with explicit scale `omega`.
    Theoretical { omega: f64 },
}

#[derive(Clone, Debug)]
pub struct TwoLayerConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub arch: TwoLayerArch,
}

/// A prediction model with quadratic-loss training in mind.
#[derive(Clone, Debug)]
pub enum Model {
    /// Identity feature map, `q` independent linear heads.
    Linear { input_dim: usize, outputs: usize },
    /// Fixed featurizer `relu(W x)` with `W` of shape `m x d`.
    RandomReluFeatures { weights: Arc<Array2<f64>>, outputs: usize },
    TwoLayerRelu(TwoLayerConfig),
}

impl Model {
    pub fn linear(input_dim: usize, outputs: usize) -> Self {
        Model::Linear { input_dim, outputs }
    }

    /// Draws the fixed feature weights `W in R^{m x d}` with iid
    /// `N(0, 1/d)` entries from `seed` (row-major draw order).
    pub fn random_relu_features(m: usize, input_dim: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let w = Array2::from_shape_fn((m, input_dim), |_| rng.next_normal() * scale);
        Model::RandomReluFeatures { weights: Arc::new(w), outputs }
    }

    pub fn two_layer_experimental(input_dim: usize, hidden: usize, outputs: usize) -> Self {
        Model::TwoLayerRelu(TwoLayerConfig {
            input_dim,
            hidden,
            outputs,
            arch: TwoLayerArch::Experimental,
        })
    }

    pub fn two_layer_theoretical(input_dim: usize, hidden: usize, omega: f64) -> Result<Self> {
        if hidden % 2 != 0 {
            return Err(invalid("theoretical two-layer net requires an even hidden width"));
        }
        Ok(Model::TwoLayerRelu(TwoLayerConfig {
            input_dim,
            hidden,
            outputs: 1,
            arch: TwoLayerArch::Theoretical { omega },
        }))
    }

    pub fn outputs(&self) -> usize {
        match self {
            Model::Linear { outputs, .. } => *outputs,
            Model::RandomReluFeatures { outputs, .. } => *outputs,
            Model::TwoLayerRelu(cfg) => cfg.outputs,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear { input_dim, .. } => *input_dim,
            Model::RandomReluFeatures { weights, .. } => weights.ncols(),
            Model::TwoLayerRelu(cfg) => cfg.input_dim,
        }
    }

    /// Dimension of the feature map for the linear-in-parameter families.
    pub fn feature_dim(&self) -> Option<usize> {
        match self {
            Model::Linear { input_dim, .. } => Some(*input_dim),
            Model::RandomReluFeatures { weights, .. } => Some(weights.nrows()),
            Model::TwoLayerRelu(_) => None,
        }
    }

    pub fn is_linear_in_params(&self) -> bool {
        self.feature_dim().is_some()
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Linear { input_dim, outputs } => input_dim * outputs,
            Model::RandomReluFeatures { weights, outputs } => weights.nrows() * outputs,
            Model::TwoLayerRelu(cfg) => match cfg.arch {
                TwoLayerArch::Experimental => {
                    cfg.hidden * cfg.input_dim
                        + cfg.hidden
                        + cfg.outputs * cfg.hidden
                        + cfg.outputs
                }
                TwoLayerArch::Theoretical { .. } => cfg.hidden * cfg.input_dim,
            },
        }
    }

    pub fn layout(&self) -> Layout {
        match self {
            Model::Linear { .. } | Model::RandomReluFeatures { .. } => {
                single_group_layout("weights", self.param_count())
            }
            Model::TwoLayerRelu(cfg) => match cfg.arch {
                TwoLayerArch::Experimental => {
                    let (d, k, q) = (cfg.input_dim, cfg.hidden, cfg.outputs);
                    let mut groups = Vec::new();
                    let mut off = 0;
                    for (name, len) in
                        [("w1", k * d), ("b1", k), ("w2", q * k), ("b2", q)]
                    {
                        groups.push(GroupSpec { name: name.to_string(), offset: off, len });
                        off += len;
                    }
                    Arc::new(groups)
                }
                TwoLayerArch::Theoretical { .. } => {
                    single_group_layout("w1", cfg.hidden * cfg.input_dim)
                }
            },
        }
    }

    /// Fixed +-1 second-layer signs of the theoretical net (first half +1).
    pub fn second_layer_signs(&self) -> Option<Array1<f64>> {
        match self {
            Model::TwoLayerRelu(cfg) => match cfg.arch {
                TwoLayerArch::Theoretical { .. } => {
                    let k = cfg.hidden;
                    Some(Array1::from_shape_fn(k, |h| if h < k / 2 { 1.0 } else { -1.0 }))
                }
                TwoLayerArch::Experimental => None,
            },
            _ => None,
        }
    }

    /// Starting parameters: zeros for the linear families, Gaussian draws
    /// (row-major layer order) for the networks.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let layout = self.layout();
        match self {
            Model::Linear { .. } | Model::RandomReluFeatures { .. } => ParamVector::zeros(layout),
            Model::TwoLayerRelu(cfg) => {
                let mut rng = SplitMix64::new(seed);
                let p = self.param_count();
                let mut values = Array1::<f64>::zeros(p);
                match cfg.arch {
                    TwoLayerArch::Experimental => {
                        let (d, k, q) = (cfg.input_dim, cfg.hidden, cfg.outputs);
                        let s1 = 1.0 / (d as f64).sqrt();
                        for i in 0..k * d {
                            values[i] = rng.next_normal() * s1;
                        }
                        // biases stay zero
                        let s2 = 1.0 / (k as f64).sqrt();
                        let w2_off = k * d + k;
                        for i in 0..q * k {
                            values[w2_off + i] = rng.next_normal() * s2;
                        }
                    }
                    TwoLayerArch::Theoretical { omega } => {
                        for v in values.iter_mut() {
                            *v = rng.next_normal() * omega;
                        }
                    }
                }
                ParamVector { values, layout }
            }
        }
    }

    fn check_inputs(&self, theta: &ParamVector, x: &ArrayView2<f64>) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(invalid(format!(
                "parameter vector has length {}, model expects {}",
                theta.len(),
                self.param_count()
            )));
        }
        if x.ncols() != self.input_dim() {
            return Err(invalid(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Feature map rows `psi(x_i)` for the linear-in-parameter families.
    pub fn feature_map(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Model::Linear { input_dim, .. } => {
                if x.ncols() != *input_dim {
                    return Err(invalid("input dimension mismatch"));
                }
                Ok(x.to_owned())
            }
            Model::RandomReluFeatures { weights, .. } => {
                if x.ncols() != weights.ncols() {
                    return Err(invalid("input dimension mismatch"));
                }
                let mut phi = x.dot(&weights.t());
                phi.mapv_inplace(|v| v.max(0.0));
                Ok(phi)
            }
            Model::TwoLayerRelu(_) => {
                Err(invalid("two-layer network has no parameter-independent feature map"))
            }
        }
    }

    /// Model outputs, `n x q`.
    pub fn predict(&self, theta: &ParamVector, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(theta, x)?;
        match self {
            Model::Linear { .. } | Model::RandomReluFeatures { .. } => {
                let phi = self.feature_map(x)?;
                let q = self.outputs();
                let m = self.feature_dim().unwrap();
                let w = theta.view().into_shape_with_order((q, m)).unwrap().to_owned();
                Ok(phi.dot(&w.t()))
            }
            Model::TwoLayerRelu(cfg) => {
                let f = TwoLayerParams::unpack(cfg, theta.view());
                Ok(f.forward(x).output)
            }
        }
    }

    /// Stacked Jacobian of the predictions, `(n*q) x p`, row `i*q + c`.
    /// Materializes the full matrix; intended for desk-scale inputs.
    pub fn jacobian(&self, theta: &ParamVector, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(theta, x)?;
        let n = x.nrows();
        let q = self.outputs();
        let p = self.param_count();
        match self {
            Model::Linear { .. } | Model::RandomReluFeatures { .. } => {
                let phi = self.feature_map(x)?;
                let m = self.feature_dim().unwrap();
                let mut j = Array2::<f64>::zeros((n * q, p));
                for i in 0..n {
                    for c in 0..q {
                        j.slice_mut(s![i * q + c, c * m..(c + 1) * m])
                            .assign(&phi.row(i));
                    }
                }
                Ok(j)
            }
            Model::TwoLayerRelu(cfg) => {
                let f = TwoLayerParams::unpack(cfg, theta.view());
                Ok(f.jacobian(x))
            }
        }
    }

    /// Jacobian-vector product `J v` as a stacked `n*q` vector.
    pub fn jacobian_vec(
        &self,
        theta: &ParamVector,
        x: &ArrayView2<f64>,
        v: &ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        self.check_inputs(theta, x)?;
        if v.len() != self.param_count() {
            return Err(invalid("direction vector has wrong length"));
        }
        match self {
            Model::Linear { .. } | Model::RandomReluFeatures { .. } => {
                let phi = self.feature_map(x)?;
                let q = self.outputs();
                let m = self.feature_dim().unwrap();
                let w = v.into_shape_with_order((q, m)).unwrap();
                let out = phi.dot(&w.t()); // n x q
                Ok(flatten_row_major(out))
            }
            Model::TwoLayerRelu(cfg) => {
                let f = TwoLayerParams::unpack(cfg, theta.view());
                let dv = TwoLayerParams::unpack(cfg, v.view());
                Ok(flatten_row_major(f.jvp(x, &dv)))
            }
        }
    }

    /// Vector-Jacobian product `J^T w` for a stacked `n*q` vector `w`.
    /// With `w` the prediction residual this is the quadratic-loss gradient.
    pub fn vec_jacobian(
        &self,
        theta: &ParamVector,
        x: &ArrayView2<f64>,
        w: &ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        self.check_inputs(theta, x)?;
        let n = x.nrows();
        let q = self.outputs();
        if w.len() != n * q {
            return Err(invalid("cotangent vector has wrong length"));
        }
        let wmat = w.into_shape_with_order((n, q)).unwrap();
        match self {
            Model::Linear { .. } | Model::RandomReluFeatures { .. } => {
                let phi = self.feature_map(x)?;
                let g = wmat.t().dot(&phi); // q x m
                Ok(flatten_row_major(g))
            }
            Model::TwoLayerRelu(cfg) => {
                let f = TwoLayerParams::unpack(cfg, theta.view());
                Ok(f.vjp(x, &wmat))
            }
        }
    }
}

fn flatten_row_major(a: Array2<f64>) -> Array1<f64> {
    let len = a.len();
    a.into_shape_with_order(len).unwrap()
}

/// Unpacked two-layer parameters (views into the flat vector).
struct TwoLayerParams<'a> {
    cfg: &'a TwoLayerConfig,
    w1: ArrayView2<'a, f64>,         // k x d
    b1: Option<ArrayView1<'a, f64>>, // k
    w2: Option<ArrayView2<'a, f64>>, // q x k
    b2: Option<ArrayView1<'a, f64>>, // q
}

struct Forward {
    acts: Array2<f64>, // n x k, relu(z)
    mask: Array2<f64>, // n x k, 1 where z > 0
    output: Array2<f64>,
}

impl<'a> TwoLayerParams<'a> {
    fn unpack(cfg: &'a TwoLayerConfig, theta: ArrayView1<'a, f64>) -> Self {
        let (d, k, q) = (cfg.input_dim, cfg.hidden, cfg.outputs);
        match cfg.arch {
            TwoLayerArch::Experimental => {
                let (w1_flat, rest) = theta.split_at(Axis(0), k * d);
                let (b1, rest) = rest.split_at(Axis(0), k);
                let (w2_flat, b2) = rest.split_at(Axis(0), q * k);
                Self {
                    cfg,
                    w1: w1_flat.into_shape_with_order((k, d)).unwrap(),
                    b1: Some(b1),
                    w2: Some(w2_flat.into_shape_with_order((q, k)).unwrap()),
                    b2: Some(b2),
                }
            }
            TwoLayerArch::Theoretical { .. } => Self {
                cfg,
                w1: theta.into_shape_with_order((k, d)).unwrap(),
                b1: None,
                w2: None,
                b2: None,
            },
        }
    }

    fn scaled_signs(&self) -> Array1<f64> {
        let k = self.cfg.hidden;
        let scale = 1.0 / (k as f64).sqrt();
        Array1::from_shape_fn(k, |h| if h < k / 2 { scale } else { -scale })
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Forward {
        let mut z = x.dot(&self.w1.t()); // n x k
        if let Some(b1) = &self.b1 {
            z += b1;
        }
        let mask = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let acts = z.mapv(|v| v.max(0.0));
        let output = match (&self.w2, &self.b2) {
            (Some(w2), Some(b2)) => {
                let mut out = acts.dot(&w2.t());
                out += b2;
                out
            }
            _ => {
                let v = self.scaled_signs();
                acts.dot(&v).insert_axis(Axis(1))
            }
        };
        Forward { acts, mask, output }
    }

    fn jacobian(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let (d, k, q) = (self.cfg.input_dim, self.cfg.hidden, self.cfg.outputs);
        let n = x.nrows();
        let p = match self.cfg.arch {
            TwoLayerArch::Experimental => k * d + k + q * k + q,
            TwoLayerArch::Theoretical { .. } => k * d,
        };
        let fwd = self.forward(x);
        let mut j = Array2::<f64>::zeros((n * q, p));
        match self.cfg.arch {
            TwoLayerArch::Experimental => {
                let w2 = self.w2.as_ref().unwrap();
                let b1_off = k * d;
                let w2_off = b1_off + k;
                let b2_off = w2_off + q * k;
                for i in 0..n {
                    for c in 0..q {
                        let mut row = j.row_mut(i * q + c);
                        for h in 0..k {
                            if fwd.mask[[i, h]] > 0.0 {
                                let g = w2[[c, h]];
                                for jd in 0..d {
                                    row[h * d + jd] = g * x[[i, jd]];
                                }
                                row[b1_off + h] = g;
                            }
                            row[w2_off + c * k + h] = fwd.acts[[i, h]];
                        }
                        row[b2_off + c] = 1.0;
                    }
                }
            }
            TwoLayerArch::Theoretical { .. } => {
                let v = self.scaled_signs();
                for i in 0..n {
                    let mut row = j.row_mut(i);
                    for h in 0..k {
                        if fwd.mask[[i, h]] > 0.0 {
                            let g = v[h];
                            for jd in 0..d {
                                row[h * d + jd] = g * x[[i, jd]];
                            }
                        }
                    }
                }
            }
        }
        j
    }

    /// Directional derivative of the outputs along the parameter direction.
    fn jvp(&self, x: &ArrayView2<f64>, dir: &TwoLayerParams) -> Array2<f64> {
        let fwd = self.forward(x);
        let mut dz = x.dot(&dir.w1.t());
        if let Some(db1) = &dir.b1 {
            dz += db1;
        }
        dz *= &fwd.mask;
        match (&self.w2, &dir.w2, &dir.b2) {
            (Some(w2), Some(dw2), Some(db2)) => {
                let mut out = dz.dot(&w2.t());
                out += &fwd.acts.dot(&dw2.t());
                out += db2;
                out
            }
            _ => {
                let v = self.scaled_signs();
                dz.dot(&v).insert_axis(Axis(1))
            }
        }
    }

    /// `J^T w` for a cotangent `w` of shape `n x q`.
    fn vjp(&self, x: &ArrayView2<f64>, w: &ArrayView2<f64>) -> Array1<f64> {
        let (d, k, q) = (self.cfg.input_dim, self.cfg.hidden, self.cfg.outputs);
        let fwd = self.forward(x);
        match self.cfg.arch {
            TwoLayerArch::Experimental => {
                let w2 = self.w2.as_ref().unwrap();
                let mut g1 = w.dot(w2); // n x k
                g1 *= &fwd.mask;
                let grad_w1 = g1.t().dot(x); // k x d
                let grad_b1 = g1.sum_axis(Axis(0)); // k
                let grad_w2 = w.t().dot(&fwd.acts); // q x k
                let grad_b2 = w.sum_axis(Axis(0)); // q
                let mut out = Array1::<f64>::zeros(k * d + k + q * k + q);
                out.slice_mut(s![0..k * d]).assign(&flatten_row_major(grad_w1));
                out.slice_mut(s![k * d..k * d + k]).assign(&grad_b1);
                out.slice_mut(s![k * d + k..k * d + k + q * k])
                    .assign(&flatten_row_major(grad_w2));
                out.slice_mut(s![k * d + k + q * k..]).assign(&grad_b2);
                out
            }
            TwoLayerArch::Theoretical { .. } => {
                let v = self.scaled_signs();
                let wv = w.column(0);
                // g1[i, h] = w_i * v_h * mask[i, h]
                let mut g1 = Array2::<f64>::zeros((x.nrows(), k));
                for i in 0..x.nrows() {
                    let wi = wv[i];
                    for h in 0..k {
                        g1[[i, h]] = wi * v[h] * fwd.mask[[i, h]];
                    }
                }
                flatten_row_major(g1.t().dot(x))
            }
        }
    }
}

/// Analytic tangent-kernel Gram matrix of the theoretical two-layer ReLU
/// net for unit-norm inputs:
/// `K_ij = (1/2) (1 - arccos(<x_i, x_j>) / pi) <x_i, x_j>`.
///
/// Inner products are clamped to `[-1, 1]` before the arccosine; rows must
/// have unit Euclidean norm to within 1e-8.
pub fn ntk_gram(x: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    for (i, row) in x.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(invalid(format!("row {i} has norm {norm}, expected 1 (tol 1e-8)")));
        }
    }
    let inner = x.dot(&x.t());
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let rho = inner[[i, j]].clamp(-1.0, 1.0);
            let v = 0.5 * (1.0 - rho.acos() / std::f64::consts::PI) * rho;
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, SplitMix64};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn random_unit_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = SplitMix64::new(seed);
        let mut x = Array2::from_shape_fn((n, d), |_| rng.next_normal());
        for mut row in x.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        x
    }

    #[test]
    fn param_vector_layout_validation() {
        let layout: Layout = Arc::new(vec![
            GroupSpec { name: "a".into(), offset: 0, len: 2 },
            GroupSpec { name: "b".into(), offset: 2, len: 3 },
        ]);
        assert!(ParamVector::new(Array1::zeros(5), Arc::clone(&layout)).is_ok());
        assert!(ParamVector::new(Array1::zeros(4), Arc::clone(&layout)).is_err());
        let gap: Layout = Arc::new(vec![
            GroupSpec { name: "a".into(), offset: 0, len: 2 },
            GroupSpec { name: "b".into(), offset: 3, len: 2 },
        ]);
        assert!(ParamVector::new(Array1::zeros(5), gap).is_err());
        assert!(ParamVector::single_group("w", array![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn one_hot_rows_validated() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let ok = Dataset::classification(x.clone(), vec![0, 1], 2).unwrap();
        assert_eq!(ok.targets().row(0).sum(), 1.0);
        let bad = Dataset::from_parts(x, array![[0.5, 0.2], [1.0, 0.0]], None, 2);
        assert!(bad.is_err());
    }

    #[test]
    fn predict_linear_zero_params() {
        let model = Model::linear(3, 1);
        let theta = ParamVector::zeros(model.layout());
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let out = model.predict(&theta, &x.view()).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_two_layer_zero_input() {
        let model = Model::two_layer_experimental(4, 6, 2);
        let theta = model.init_params(1);
        let x = Array2::<f64>::zeros((1, 4));
        let out = model.predict(&theta, &x.view()).unwrap();
        // biases start at zero, so relu(0) = 0 end to end
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_random_relu_hand_value() {
        // W = I2, x = (1, -1): relu(W x) = (1, 0); theta = (1, 1) -> 1.
        let model = Model::RandomReluFeatures {
            weights: Arc::new(Array2::eye(2)),
            outputs: 1,
        };
        let theta = ParamVector::single_group("weights", array![1.0, 1.0]).unwrap();
        let x = array![[1.0, -1.0]];
        let out = model.predict(&theta, &x.view()).unwrap();
        assert_relative_eq!(out[[0, 0]], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_identity_featurizer_is_input() {
        let model = Model::linear(3, 1);
        let theta = ParamVector::zeros(model.layout());
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let j = model.jacobian(&theta, &x.view()).unwrap();
        assert_eq!(j, x);
    }

    #[test]
    fn jacobian_random_relu_independent_of_theta() {
        let model = Model::random_relu_features(5, 3, 2, 0);
        let x = random_unit_rows(4, 3, 1);
        let t0 = ParamVector::zeros(model.layout());
        let mut rng = SplitMix64::new(2);
        let t1 = ParamVector::single_group(
            "weights",
            Array1::from_iter((0..model.param_count()).map(|_| rng.next_normal())),
        )
        .unwrap();
        let j0 = model.jacobian(&t0, &x.view()).unwrap();
        let j1 = model.jacobian(&t1, &x.view()).unwrap();
        assert_eq!(j0, j1);
        // row of class block c equals the feature map
        let phi = model.feature_map(&x.view()).unwrap();
        for i in 0..4 {
            for c in 0..2 {
                let row = j0.row(i * 2 + c);
                let block = row.slice(s![c * 5..(c + 1) * 5]);
                assert_eq!(block, phi.row(i));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_invalid_argument() {
        let model = Model::linear(3, 1);
        let theta = ParamVector::zeros(model.layout());
        let x = array![[1.0, 2.0]];
        assert!(model.predict(&theta, &x.view()).is_err());
        let theta_bad = ParamVector::single_group("weights", array![1.0, 2.0]).unwrap();
        let x3 = array![[1.0, 2.0, 3.0]];
        assert!(model.predict(&theta_bad, &x3.view()).is_err());
    }

    /// Central finite differences on a single Jacobian entry set.
    fn fd_jacobian(model: &Model, theta: &ParamVector, x: &ArrayView2<f64>, h: f64) -> Array2<f64> {
        let p = model.param_count();
        let n = x.nrows();
        let q = model.outputs();
        let mut j = Array2::<f64>::zeros((n * q, p));
        for pi in 0..p {
            let mut tp = theta.values().clone();
            tp[pi] += h;
            let mut tm = theta.values().clone();
            tm[pi] -= h;
            let fp = model
                .predict(&theta.with_values(tp).unwrap(), x)
                .unwrap();
            let fm = model
                .predict(&theta.with_values(tm).unwrap(), x)
                .unwrap();
            for i in 0..n {
                for c in 0..q {
                    j[[i * q + c, pi]] = (fp[[i, c]] - fm[[i, c]]) / (2.0 * h);
                }
            }
        }
        j
    }

    /// Draws (theta, x) for a model, resampling until every ReLU
    /// pre-activation is safely away from the kink.
    fn kink_free_draw(model: &Model, seed: u64) -> (ParamVector, Array2<f64>) {
        let n = 3;
        let d = model.input_dim();
        for attempt in 0..200 {
            let s = derive(seed, attempt);
            let mut rng = SplitMix64::new(s);
            let x = Array2::from_shape_fn((n, d), |_| rng.next_normal());
            let theta = match model {
                Model::TwoLayerRelu(_) => {
                    let base = model.init_params(derive(s, 1));
                    base
                }
                _ => ParamVector::single_group(
                    "weights",
                    Array1::from_iter((0..model.param_count()).map(|_| rng.next_normal())),
                )
                .unwrap(),
            };
            let safe = match model {
                Model::TwoLayerRelu(cfg) => {
                    let f = TwoLayerParams::unpack(cfg, theta.view());
                    let mut z = x.dot(&f.w1.t());
                    if let Some(b1) = &f.b1 {
                        z += b1;
                    }
                    z.iter().all(|v| v.abs() > 1e-3)
                }
                Model::RandomReluFeatures { weights, .. } => {
                    let z = x.dot(&weights.t());
                    z.iter().all(|v| v.abs() > 1e-3)
                }
                Model::Linear { .. } => true,
            };
            if safe {
                return (theta, x);
            }
        }
        panic!("could not find a kink-free draw");
    }

    #[test]
    fn jacobian_matches_finite_differences_all_kinds() {
        let models = vec![
            Model::linear(4, 2),
            Model::random_relu_features(6, 4, 2, 3),
            Model::two_layer_experimental(4, 8, 2),
            Model::two_layer_theoretical(4, 8, 1.0).unwrap(),
        ];
        for (mi, model) in models.iter().enumerate() {
            let mut worst = 0.0f64;
            for draw in 0..20 {
                let (theta, x) = kink_free_draw(model, (mi as u64) * 1000 + draw);
                let j = model.jacobian(&theta, &x.view()).unwrap();
                let jfd = fd_jacobian(model, &theta, &x.view(), 1e-5);
                let scale = j.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
                for (a, b) in j.iter().zip(jfd.iter()) {
                    let rel = (a - b).abs() / scale;
                    worst = worst.max(rel);
                }
            }
            assert!(worst <= 1e-4, "model {mi}: max relative FD error {worst}");
        }
    }

    #[test]
    fn jvp_vjp_consistent_with_jacobian() {
        let model = Model::two_layer_experimental(3, 6, 2);
        let (theta, x) = kink_free_draw(&model, 99);
        let j = model.jacobian(&theta, &x.view()).unwrap();
        let mut rng = SplitMix64::new(4);
        let v = Array1::from_iter((0..model.param_count()).map(|_| rng.next_normal()));
        let w = Array1::from_iter((0..x.nrows() * 2).map(|_| rng.next_normal()));
        let jv = model.jacobian_vec(&theta, &x.view(), &v.view()).unwrap();
        let jv_ref = j.dot(&v);
        assert!((&jv - &jv_ref).iter().map(|z| z.abs()).fold(0.0, f64::max) < 1e-10);
        let jtw = model.vec_jacobian(&theta, &x.view(), &w.view()).unwrap();
        let jtw_ref = j.t().dot(&w);
        assert!((&jtw - &jtw_ref).iter().map(|z| z.abs()).fold(0.0, f64::max) < 1e-10);
    }

    #[test]
    fn linearity_in_parameters() {
        let model = Model::random_relu_features(8, 5, 3, 7);
        let x = random_unit_rows(6, 5, 8);
        let mut rng = SplitMix64::new(9);
        let p = model.param_count();
        let t1 = Array1::from_iter((0..p).map(|_| rng.next_normal()));
        let t2 = Array1::from_iter((0..p).map(|_| rng.next_normal()));
        let sum = &t1 + &t2;
        let f1 = model
            .predict(&ParamVector::single_group("weights", t1).unwrap(), &x.view())
            .unwrap();
        let f2 = model
            .predict(&ParamVector::single_group("weights", t2).unwrap(), &x.view())
            .unwrap();
        let fs = model
            .predict(&ParamVector::single_group("weights", sum).unwrap(), &x.view())
            .unwrap();
        let scale = fs.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        let err = (&fs - &(&f1 + &f2)).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err / scale < 1e-10);
    }

    #[test]
    fn ntk_gram_special_inner_products() {
        // rho = 1 -> 1/2; rho = 0 -> 0; rho = -1 -> 0.
        let x = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let k = ntk_gram(&x.view()).unwrap();
        assert_relative_eq!(k[[0, 1]], 0.5, epsilon = 1e-15);
        assert_relative_eq!(k[[0, 2]], 0.0, epsilon = 1e-15);
        assert!(k[[0, 3]].abs() < 1e-15);
        assert_relative_eq!(k[[0, 0]], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ntk_gram_rejects_non_unit_rows() {
        let x = array![[1.0, 1.0]];
        assert!(ntk_gram(&x.view()).is_err());
    }

    #[test]
    fn ntk_gram_symmetric_psd() {
        let x = random_unit_rows(30, 6, 11);
        let k = ntk_gram(&x.view()).unwrap();
        let asym = (&k - &k.t()).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(asym == 0.0);
        let min_eig = crate::linalg::min_eigenvalue(&k.view()).unwrap();
        assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
    }

    #[test]
    fn ntk_monte_carlo_consistency_small_width() {
        // Smoke-scale version of the width-consistency check; the
        // acceptance suite runs k = 10^4.
        let k_width = 2000;
        let d = 8;
        let model = Model::two_layer_theoretical(d, k_width, 1.0).unwrap();
        let x = random_unit_rows(6, d, 21);
        let gram = ntk_gram(&x.view()).unwrap();
        let theta = model.init_params(22);
        let j = model.jacobian(&theta, &x.view()).unwrap();
        let tol = 5.0 / (k_width as f64).sqrt();
        for i in 0..3 {
            let a = 2 * i;
            let b = 2 * i + 1;
            let emp = j.row(a).dot(&j.row(b));
            assert!(
                (emp - gram[[a, b]]).abs() <= tol,
                "pair ({a},{b}): empirical {emp} vs analytic {} (tol {tol})",
                gram[[a, b]]
            );
        }
    }

    #[test]
    fn theoretical_net_signs_balanced() {
        let model = Model::two_layer_theoretical(3, 10, 1.0).unwrap();
        let v = model.second_layer_signs().unwrap();
        assert_eq!(v.iter().filter(|&&s| s == 1.0).count(), 5);
        assert_eq!(v.iter().filter(|&&s| s == -1.0).count(), 5);
        assert!(Model::two_layer_theoretical(3, 7, 1.0).is_err());
    }

    #[test]
    fn experimental_param_count_matches_mnist_shape() {
        let model = Model::two_layer_experimental(784, 500, 10);
        assert_eq!(model.param_count(), 397_510);
    }
}
