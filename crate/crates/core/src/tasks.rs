//! Task generators: pixel permutations, class-incremental splits, Gaussian
//! linear regression, and Gaussian-mixture classification.
//!
//! Every generator is a pure function of its seed (see [`crate::rng`] for
//! the generator's exact definition), so datasets can be regenerated
//! byte-for-byte. Draw orders are fixed: features row-major first, then
//! noise/labels as documented per function.

use ndarray::{Array1, Array2};

use crate::error::{invalid, Result};
use crate::models::Dataset;
use crate::rng::SplitMix64;

/// A fixed bijection on feature indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationSpec {
    perm: Vec<usize>,
    seed: Option<u64>,
}

impl PermutationSpec {
    /// The identity permutation (task 0 of the permutation benchmark).
    pub fn identity(dim: usize) -> Self {
        Self { perm: (0..dim).collect(), seed: None }
    }

    /// Fisher-Yates shuffle of `0..dim` drawn from `seed`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..dim).collect();
        let mut rng = SplitMix64::new(seed);
        rng.shuffle(&mut perm);
        Self { perm, seed: Some(seed) }
    }

    /// Uses an explicit image; fails if it is not a bijection.
    pub fn from_indices(perm: Vec<usize>) -> Result<Self> {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted != (0..perm.len()).collect::<Vec<_>>() {
            return Err(invalid("permutation is not a bijection on 0..d"));
        }
        Ok(Self { perm, seed: None })
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0usize; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv, seed: None }
    }
}

/// Applies one fixed permutation to every feature row: output column `j`
/// reads input column `perm[j]`. Targets and labels are untouched.
pub fn permuted_task(base: &Dataset, spec: &PermutationSpec) -> Result<Dataset> {
    if spec.perm.len() != base.input_dim() {
        return Err(invalid(format!(
            "permutation over {} columns applied to {}-dimensional data",
            spec.perm.len(),
            base.input_dim()
        )));
    }
    if spec.is_identity() {
        return Ok(base.clone());
    }
    let x = base.features();
    let mut out = Array2::<f64>::zeros(x.raw_dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        for (j, &src) in spec.perm.iter().enumerate() {
            out[[i, j]] = row[src];
        }
    }
    Dataset::from_parts(
        out,
        base.targets().clone(),
        base.labels().map(|l| l.to_vec()),
        base.num_classes(),
    )
}

/// Splits a classification set into label groups (e.g. digit pairs
/// `{0,1}, {2,3}, ...`). Targets stay one-hot over the full class set, so
/// evaluation remains single-head.
pub fn incremental_split(base: &Dataset, pairs: &[Vec<i64>]) -> Result<Vec<Dataset>> {
    if base.num_classes() == 0 {
        return Err(invalid("incremental_split requires a classification dataset"));
    }
    let labels = base
        .labels()
        .ok_or_else(|| invalid("incremental_split requires labels"))?;
    let mut seen = std::collections::HashSet::new();
    for pair in pairs {
        for &c in pair {
            if !seen.insert(c) {
                return Err(invalid(format!("class {c} appears in more than one group")));
            }
            if !labels.contains(&c) {
                return Err(invalid(format!("class {c} is not present in the dataset")));
            }
        }
    }
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| pair.contains(l))
            .map(|(i, _)| i)
            .collect();
        out.push(base.select(&idx)?);
    }
    Ok(out)
}

/// `n` examples of `y = <x, theta> + z` with `x ~ N(0, I)` and
/// `z ~ N(0, sigma^2)`. Draw order: the feature matrix row-major, then the
/// noise vector.
pub fn gaussian_linear_task(theta: &Array1<f64>, sigma: f64, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("gaussian_linear_task requires n >= 1"));
    }
    if sigma < 0.0 {
        return Err(invalid("sigma must be nonnegative"));
    }
    let d = theta.len();
    let mut rng = SplitMix64::new(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.next_normal());
    let mut y = x.dot(theta);
    for v in y.iter_mut() {
        *v += sigma * rng.next_normal();
    }
    Dataset::regression(x, y)
}

/// Unit-norm class mean plus within-class deviation of a two-component
/// Gaussian mixture.
#[derive(Clone, Debug)]
pub struct GmmSpec {
    mu: Array1<f64>,
    sigma: f64,
}

impl GmmSpec {
    pub fn new(mu: Array1<f64>, sigma: f64) -> Result<Self> {
        let norm = mu.dot(&mu).sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("class mean must have unit norm, got {norm}")));
        }
        if !(sigma > 0.0) {
            return Err(invalid("sigma must be positive"));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `n` draws of the mixture: `y` uniform on {-1, +1}, `x = y mu + sigma g`.
/// Draw order per example: one label bit, then the `d` noise components.
/// Labels are stored as +-1, targets as an `n x 1` matrix of +-1.
pub fn gmm_task(spec: &GmmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("gmm_task requires n >= 1"));
    }
    let d = spec.mu.len();
    let mut rng = SplitMix64::new(seed);
    let mut x = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut targets = Array2::<f64>::zeros((n, 1));
    for i in 0..n {
        let y: f64 = if rng.below(2) == 1 { 1.0 } else { -1.0 };
        for j in 0..d {
            x[[i, j]] = y * spec.mu[j] + spec.sigma * rng.next_normal();
        }
        labels.push(y as i64);
        targets[[i, 0]] = y;
    }
    Dataset::from_parts(x, targets, Some(labels), 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_cdf;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn toy_classification(n: usize, d: usize, num_classes: usize, seed: u64) -> Dataset {
        let mut rng = SplitMix64::new(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.next_normal());
        let labels: Vec<i64> = (0..n).map(|_| rng.below(num_classes as u64) as i64).collect();
        Dataset::classification(x, labels, num_classes).unwrap()
    }

    #[test]
    fn identity_permutation_returns_base_bitwise() {
        let base = toy_classification(10, 6, 3, 1);
        let out = permuted_task(&base, &PermutationSpec::identity(6)).unwrap();
        assert_eq!(out.features(), base.features());
    }

    #[test]
    fn hand_permutation() {
        // perm (2,0,1): row (a,b,c) -> (c,a,b)
        let base = Dataset::regression(array![[1.0, 2.0, 3.0]], array![0.0]).unwrap();
        let spec = PermutationSpec::from_indices(vec![2, 0, 1]).unwrap();
        let out = permuted_task(&base, &spec).unwrap();
        assert_eq!(out.features().row(0).to_vec(), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn same_permutation_for_every_row() {
        let base = toy_classification(5, 8, 2, 2);
        let spec = PermutationSpec::random(8, 7);
        let out = permuted_task(&base, &spec).unwrap();
        for i in 0..5 {
            for j in 0..8 {
                assert_eq!(out.features()[[i, j]], base.features()[[i, spec.indices()[j]]]);
            }
        }
    }

    #[test]
    fn inverse_permutation_restores_base() {
        let base = toy_classification(7, 12, 2, 3);
        let spec = PermutationSpec::random(12, 11);
        let there = permuted_task(&base, &spec).unwrap();
        let back = permuted_task(&there, &spec.inverse()).unwrap();
        assert_eq!(back.features(), base.features());
    }

    #[test]
    fn permutation_is_bijection() {
        let spec = PermutationSpec::random(100, 13);
        let mut sorted = spec.indices().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert!(PermutationSpec::from_indices(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn fixed_seed_bitwise_reproducible() {
        let a = gaussian_linear_task(&array![1.0, -1.0], 0.5, 50, 99).unwrap();
        let b = gaussian_linear_task(&array![1.0, -1.0], 0.5, 50, 99).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.targets(), b.targets());
        let s = GmmSpec::new(array![1.0, 0.0], 0.3).unwrap();
        let a = gmm_task(&s, 40, 5).unwrap();
        let b = gmm_task(&s, 40, 5).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn incremental_split_partitions_and_is_label_pure() {
        let base = toy_classification(200, 4, 10, 4);
        let pairs = vec![vec![0, 1], vec![2, 3], vec![8, 9]];
        let tasks = incremental_split(&base, &pairs).unwrap();
        assert_eq!(tasks.len(), 3);
        let total: usize = tasks.iter().map(|t| t.n()).sum();
        let labels = base.labels().unwrap();
        let expect = labels
            .iter()
            .filter(|l| pairs.iter().any(|p| p.contains(l)))
            .count();
        assert_eq!(total, expect);
        for (task, pair) in tasks.iter().zip(&pairs) {
            assert!(task.labels().unwrap().iter().all(|l| pair.contains(l)));
            // one-hot stays over the full 10 classes
            assert_eq!(task.targets().ncols(), 10);
        }
    }

    #[test]
    fn incremental_split_single_pair_covering_all_labels() {
        let base = toy_classification(50, 3, 2, 5);
        let tasks = incremental_split(&base, &[vec![0, 1]]).unwrap();
        assert_eq!(tasks[0].n(), base.n());
    }

    #[test]
    fn incremental_split_rejects_missing_or_duplicate_classes() {
        let base = toy_classification(50, 3, 4, 6);
        assert!(incremental_split(&base, &[vec![0, 9]]).is_err());
        assert!(incremental_split(&base, &[vec![0, 1], vec![1, 2]]).is_err());
    }

    #[test]
    fn noiseless_linear_task_is_exact() {
        let theta = array![1.0, 0.0, 0.0];
        let data = gaussian_linear_task(&theta, 0.0, 30, 8).unwrap();
        for i in 0..30 {
            assert_eq!(data.targets()[[i, 0]], data.features()[[i, 0]]);
        }
    }

    #[test]
    fn pure_noise_targets_have_small_mean() {
        let theta = Array1::<f64>::zeros(4);
        let n = 4000;
        let data = gaussian_linear_task(&theta, 1.0, n, 9).unwrap();
        let mean = data.targets().sum() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn least_squares_recovers_generating_parameter() {
        let theta = array![0.5, -1.0, 2.0, 0.0, 1.0];
        let data = gaussian_linear_task(&theta, 0.1, 10_000, 10).unwrap();
        let x = data.features();
        let y = data.targets().column(0).to_owned();
        let gram = x.t().dot(x);
        let rhs = x.t().dot(&y);
        let est = crate::linalg::solve_spd(&gram.view(), &rhs.view()).unwrap();
        let err = (&est - &theta).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-1, "recovery error {err}");
    }

    #[test]
    fn gmm_small_sigma_concentrates_on_means() {
        let mu = array![0.6, 0.8];
        let spec = GmmSpec::new(mu.clone(), 1e-9).unwrap();
        let data = gmm_task(&spec, 20, 11).unwrap();
        for i in 0..20 {
            let y = data.labels().unwrap()[i] as f64;
            for j in 0..2 {
                assert_relative_eq!(data.features()[[i, j]], y * mu[j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gmm_class_conditional_mean() {
        let mu = array![1.0, 0.0, 0.0];
        let sigma = 0.5;
        let spec = GmmSpec::new(mu.clone(), sigma).unwrap();
        let n = 20_000;
        let data = gmm_task(&spec, n, 12).unwrap();
        // mean of y * x estimates mu
        let mut acc = Array1::<f64>::zeros(3);
        for i in 0..n {
            let y = data.labels().unwrap()[i] as f64;
            for j in 0..3 {
                acc[j] += y * data.features()[[i, j]];
            }
        }
        acc.mapv_inplace(|v| v / n as f64);
        let tol = 4.0 * sigma / (n as f64).sqrt();
        for j in 0..3 {
            assert!((acc[j] - mu[j]).abs() < tol, "component {j}: {} vs {}", acc[j], mu[j]);
        }
    }

    #[test]
    fn gmm_bayes_classifier_error_matches_phi() {
        let mu = array![1.0, 0.0, 0.0, 0.0];
        let sigma = 0.5;
        let spec = GmmSpec::new(mu.clone(), sigma).unwrap();
        let n = 20_000;
        let data = gmm_task(&spec, n, 13).unwrap();
        let mut wrong = 0usize;
        for i in 0..n {
            let score: f64 = (0..4).map(|j| mu[j] * data.features()[[i, j]]).sum();
            let pred = if score >= 0.0 { 1 } else { -1 };
            if pred != data.labels().unwrap()[i] {
                wrong += 1;
            }
        }
        let emp = wrong as f64 / n as f64;
        let analytic = normal_cdf(-1.0 / sigma);
        assert!((emp - analytic).abs() < 0.02, "empirical {emp} vs analytic {analytic}");
    }

    #[test]
    fn gmm_noise_covariance_sane() {
        let d = 6;
        let mut mu = Array1::<f64>::zeros(d);
        mu[0] = 1.0;
        let sigma = 0.7;
        let spec = GmmSpec::new(mu.clone(), sigma).unwrap();
        let n = 50_000;
        let data = gmm_task(&spec, n, 14).unwrap();
        // sample covariance of (x - y mu) should be close to sigma^2 I
        let mut cov = Array2::<f64>::zeros((d, d));
        for i in 0..n {
            let y = data.labels().unwrap()[i] as f64;
            let mut g = Array1::<f64>::zeros(d);
            for j in 0..d {
                g[j] = data.features()[[i, j]] - y * mu[j];
            }
            for a in 0..d {
                for b in 0..d {
                    cov[[a, b]] += g[a] * g[b];
                }
            }
        }
        cov.mapv_inplace(|v| v / n as f64);
        let target = Array2::<f64>::eye(d).mapv(|v| v * sigma * sigma);
        let err = crate::linalg::frobenius(&(&cov - &target).view());
        let base = crate::linalg::frobenius(&target.view());
        assert!(err / base < 0.10, "covariance deviation {}", err / base);
    }

    #[test]
    fn gmm_spec_requires_unit_norm() {
        assert!(GmmSpec::new(array![1.0, 1.0], 0.5).is_err());
        assert!(GmmSpec::new(array![1.0, 0.0], 0.0).is_err());
    }
}
