//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold under which a Householder pivot is treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis for the orthogonal complement of the column space of `x`.
///
/// Runs a Householder QR of `x` (n×d) and returns the trailing `n - d` columns
/// of the full orthogonal factor. `name` is only used in error messages.
pub fn householder_complement(x: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if d > n {
        return Err(Error::RankDeficient {
            matrix: name,
            column: n,
        });
    }
    let scale = (0..d).map(|j| x.column(j).norm()).fold(0.0_f64, f64::max);
    let mut r = x.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut v: DVector<f64> = r.view((j, j), (n - j, 1)).column(0).into_owned();
        let norm = v.norm();
        if scale == 0.0 || norm <= RANK_TOL * scale {
            return Err(Error::RankDeficient {
                matrix: name,
                column: j,
            });
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.norm();
        v /= vnorm;
        for c in j..d {
            let mut col = r.view_mut((j, c), (n - j, 1));
            let dot = v.dot(&col.column(0));
            col.column_mut(0).axpy(-2.0 * dot, &v, 1.0);
        }
        reflectors.push(v);
    }
    let mut q = DMatrix::<f64>::zeros(n, n - d);
    for i in 0..(n - d) {
        q[(d + i, i)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        for c in 0..(n - d) {
            let mut col = q.view_mut((j, c), (n - j, 1));
            let dot = v.dot(&col.column(0));
            col.column_mut(0).axpy(-2.0 * dot, v, 1.0);
        }
    }
    Ok(q)
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
/// Columns of the returned matrix are the matching eigenvectors.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `f(M)` for symmetric `M`, applied through the spectrum. Errors when any
/// eigenvalue is not strictly positive relative to the largest.
fn sym_spectral_fn(m: &DMatrix<f64>, what: &str, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen_desc(m);
    let top = values.first().copied().unwrap_or(0.0);
    if values.iter().any(|&v| !(v > 1e-14 * top.abs()) || v <= 0.0) {
        return Err(Error::Singular(format!("{what} is not positive definite")));
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| vectors[(i, j)] * f(values[j]));
    Ok(&scaled * vectors.transpose())
}

/// Symmetric square root of a positive definite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    sym_spectral_fn(m, what, f64::sqrt)
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    sym_spectral_fn(m, what, |v| 1.0 / v.sqrt())
}

/// Symmetric square root of a positive semidefinite matrix; tiny negative
/// eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(m);
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        vectors[(i, j)] * values[j].max(0.0).sqrt()
    });
    &scaled * vectors.transpose()
}

/// 2-norm condition number of a symmetric positive semidefinite matrix.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen_desc(m);
    let hi = values.first().copied().unwrap_or(0.0);
    let lo = values.last().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Pairwise (cascade) summation; result does not depend on thread scheduling.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Returns the first non-finite entry of `m`, if any.
pub fn check_finite(m: &DMatrix<f64>, matrix: &'static str) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { matrix, row: r, col: c });
            }
        }
    }
    Ok(())
}
