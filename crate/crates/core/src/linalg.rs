//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix not positive definite after regularization (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Inverse of `m + lambda I` through a symmetric eigendecomposition. Fails if
/// any eigenvalue of the regularized matrix is not strictly positive.
pub fn regularized_inverse(m: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, LinalgError> {
    let mut s = m.clone();
    symmetrize(&mut s);
    for i in 0..s.nrows() {
        s[(i, i)] += lambda;
    }
    let eig = SymmetricEigen::new(s);
    let min_eig = eig.eigenvalues.min();
    if min_eig <= 0.0 || !min_eig.is_finite() {
        return Err(LinalgError::NotPositiveDefinite { min_eig });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// Pseudo-inverse of a symmetric matrix, truncating eigenvalues below
/// `rel_tol * max|eigenvalue|`. Also returns the retained rank.
pub fn pinv_sym(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    if m.is_empty() {
        return (m.clone(), 0);
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let max = eig.eigenvalues.amax();
    let cut = rel_tol * max;
    let mut rank = 0;
    let inv_vals = eig.eigenvalues.map(|v| {
        if v > cut && v > 0.0 {
            rank += 1;
            1.0 / v
        } else {
            0.0
        }
    });
    (
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose(),
        rank,
    )
}

/// Inverse of a symmetric positive (semi)definite block. Cholesky first,
/// eigen pseudo-inverse if the factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    match s.clone().cholesky() {
        Some(c) => c.inverse(),
        None => pinv_sym(&s, 1e-14).0,
    }
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Schur complement onto `keep`, eliminating `marg`:
/// `H_kk - H_km H_mm^-1 H_mk` and `b_k - H_km H_mm^-1 b_m`.
pub fn schur_complement(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    keep: &[usize],
    marg: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let h_kk = submatrix(h, keep, keep);
    let b_k = subvector(b, keep);
    if marg.is_empty() {
        return (h_kk, b_k);
    }
    let h_km = submatrix(h, keep, marg);
    let h_mm_inv = spd_inverse(&submatrix(h, marg, marg));
    let b_m = subvector(b, marg);
    let t = &h_km * &h_mm_inv;
    let mut hm = h_kk - &t * h_km.transpose();
    symmetrize(&mut hm);
    let bm = b_k - t * b_m;
    (hm, bm)
}
