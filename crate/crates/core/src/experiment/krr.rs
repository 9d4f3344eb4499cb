//! Kernel ridge regression.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram_matrix, KernelDescriptor};

/// Relative eigenvalue cutoff of the ridgeless pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

const JITTERS: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Dual coefficients `(K + lambda I)^{-1} Y` for every label column.
///
/// With `lambda > 0` a Cholesky factorization is used, adding diagonal
/// jitter (relative to the mean diagonal) up to `1e-8` if roundoff makes the
/// matrix numerically indefinite. With `lambda = 0` the minimum-norm
/// interpolant is formed from the eigendecomposition, discarding directions
/// with eigenvalue below `1e-10` of the largest.
pub fn krr_solve(k_train: &DMatrix<f64>, labels: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let p = k_train.nrows();
    if p == 0 || !k_train.is_square() {
        return Err(Error::Invalid("training gram matrix must be square and nonempty".into()));
    }
    if labels.nrows() != p {
        return Err(Error::Invalid(format!("{} label rows for {p} training points", labels.nrows())));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge {ridge} must be finite and >= 0")));
    }
    if ridge > 0.0 {
        let mean_diag = k_train.trace() / p as f64;
        for jitter in JITTERS {
            let mut a = k_train.clone();
            for i in 0..p {
                a[(i, i)] += ridge + jitter * mean_diag;
            }
            if let Some(chol) = Cholesky::new(a) {
                return Ok(chol.solve(labels));
            }
        }
        return Err(Error::Numerical(format!(
            "regularized gram matrix of size {p} is not positive definite even with jitter 1e-8"
        )));
    }
    let eig = SymmetricEigen::try_new(k_train.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical(format!("eigendecomposition of a {p}x{p} gram matrix failed")))?;
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    if !(top > 0.0) {
        return Err(Error::Numerical("training gram matrix has no positive eigenvalue".into()));
    }
    let cutoff = PINV_CUTOFF * top;
    let v = &eig.eigenvectors;
    let mut coeffs = v.tr_mul(labels);
    for (i, s) in eig.eigenvalues.iter().enumerate() {
        let inv = if *s > cutoff { 1.0 / s } else { 0.0 };
        coeffs.row_mut(i).scale_mut(inv);
    }
    Ok(v * coeffs)
}

/// Predictions `k(x)^T (K + lambda I)^{-1} Y` at the rows of `test`.
pub fn krr_fit_predict(
    kernel: &KernelDescriptor,
    train: &DMatrix<f64>,
    labels: &DMatrix<f64>,
    ridge: f64,
    test: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k_train = gram_matrix(kernel, train)?;
    let alpha = krr_solve(&k_train, labels, ridge)?;
    Ok(cross_gram(kernel, test, train)? * alpha)
}
