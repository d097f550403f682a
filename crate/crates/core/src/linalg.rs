//! Small dense linear-algebra kernels: Cholesky solves, a cyclic Jacobi
//! symmetric eigensolver, a thin SVD built on it, and power iteration.
//!
//! Everything here targets desk-scale matrices (a few hundred rows). Large
//! matrix products go through `ndarray::dot`, which dispatches to
//! `matrixmultiply`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Error, Result};
use crate::rng::SplitMix64;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` if a non-positive pivot is hit.
pub fn cholesky(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            x[i] -= lik * x[k];
        }
        x[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[[k, i]];
            x[i] -= lki * x[k];
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(invalid(format!(
            "solve_spd: shape mismatch ({}x{} vs rhs {})",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let l = cholesky(a).ok_or_else(|| invalid("solve_spd: matrix is not positive definite"))?;
    Ok(cholesky_solve(&l.view(), b))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns.
pub fn sym_eigen(a: &ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(invalid("sym_eigen: matrix must be square"));
    }
    let sym_err = (a - &a.t()).iter().map(|x| x.abs()).fold(0.0, f64::max);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    if sym_err > 1e-8 * scale {
        return Err(invalid(format!(
            "sym_eigen: matrix is not symmetric (max asymmetry {sym_err:.3e})"
        )));
    }
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 60;
    for _sweep in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * scale.max(1.0) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (new, &old) in order.iter().enumerate() {
        vecs.column_mut(new).assign(&v.column(old));
    }
    Ok((vals, vecs))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &ArrayView2<f64>) -> Result<f64> {
    let (vals, _) = sym_eigen(a)?;
    Ok(vals[0])
}

/// Thin singular value decomposition `A = U diag(s) V^T` for `n x p` with
/// `n >= p`, computed from the eigendecomposition of `A^T A`. Singular
/// values come out in descending order; left vectors for singular values
/// below `tol` are filled with zeros.
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

pub fn thin_svd(a: &ArrayView2<f64>) -> Result<ThinSvd> {
    let (n, p) = (a.nrows(), a.ncols());
    if n < p {
        return Err(invalid("thin_svd: expected n >= p"));
    }
    let gram = a.t().dot(a);
    let (vals, vecs) = sym_eigen(&gram.view())?;
    // ascending -> descending
    let mut s = Array1::<f64>::zeros(p);
    let mut v = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let src = p - 1 - j;
        s[j] = vals[src].max(0.0).sqrt();
        v.column_mut(j).assign(&vecs.column(src));
    }
    let av = a.dot(&v);
    let mut u = Array2::<f64>::zeros((n, p));
    let tol = s[0].max(1e-300) * 1e-12;
    for j in 0..p {
        if s[j] > tol {
            let col = av.column(j).mapv(|x| x / s[j]);
            u.column_mut(j).assign(&col);
        }
    }
    Ok(ThinSvd { u, s, v })
}

/// Random matrix with orthonormal columns (Gaussian draw + modified
/// Gram-Schmidt).
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    assert!(rows >= cols, "random_orthonormal: need rows >= cols");
    let mut rng = SplitMix64::new(seed);
    let mut a = Array2::<f64>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            a[[i, j]] = rng.next_normal();
        }
    }
    for j in 0..cols {
        for k in 0..j {
            let proj = a.column(k).dot(&a.column(j));
            let col_k = a.column(k).to_owned();
            a.column_mut(j).scaled_add(-proj, &col_k);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|x| x / norm);
    }
    a
}

/// Largest eigenvalue of a symmetric PSD operator given through its
/// matrix-vector product, by power iteration with a fixed iteration count.
pub fn power_method<F>(matvec: F, dim: usize, iters: usize, seed: u64) -> f64
where
    F: Fn(&ArrayView1<f64>) -> Array1<f64>,
{
    let mut rng = SplitMix64::new(seed);
    let mut v = Array1::from_iter((0..dim).map(|_| rng.next_normal()));
    let mut norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        norm = 1.0;
    }
    v.mapv_inplace(|x| x / norm);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = matvec(&v.view());
        lambda = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn <= 1e-300 {
            return 0.0;
        }
        v = w.mapv(|x| x / wn);
    }
    lambda.max(0.0)
}

pub fn frobenius(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm via power iteration on `A^T A`.
pub fn spectral_norm(a: &ArrayView2<f64>, iters: usize, seed: u64) -> f64 {
    let at = a.t();
    power_method(
        |v| at.dot(&a.dot(v)),
        a.ncols(),
        iters,
        seed,
    )
    .sqrt()
}

/// Guards against NaN/inf inputs.
pub fn ensure_finite(a: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} contains non-finite entries")));
    }
    Ok(())
}
