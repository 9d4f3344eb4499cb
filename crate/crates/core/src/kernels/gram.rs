use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::KernelDescriptor;
use crate::error::{Error, Result};

/// Empirical Mercer decomposition of a kernel on `M` sample points.
///
/// `eigenvalues` are those of `Gram / M`, descending. Column `k` of `phi`
/// holds the eigenfunction `phi_k` evaluated at the sample points, scaled so
/// that `phi^T phi / M` is the identity.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub phi: DMatrix<f64>,
    pub sample_count: usize,
}

impl EigenSystem {
    /// True when every eigenpair of the Gram matrix is present.
    pub fn is_complete(&self) -> bool {
        self.eigenvalues.len() == self.sample_count
    }

    /// `max |phi^T phi / M - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.sample_count as f64;
        let g = self.phi.tr_mul(&self.phi) / m;
        let n = g.nrows();
        (g - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// Spectral norm of `Gram - M phi diag(eta) phi^T`, relative to that of
    /// `Gram`.
    pub fn reconstruction_error(&self, gram: &DMatrix<f64>) -> f64 {
        let scaled = DMatrix::from_fn(self.phi.nrows(), self.phi.ncols(), |i, j| {
            self.phi[(i, j)] * self.eigenvalues[j]
        });
        let rebuilt = &scaled * self.phi.transpose();
        let diff = gram - rebuilt;
        spectral_norm(&diff) / spectral_norm(gram).max(f64::MIN_POSITIVE)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
}

fn row_norms_sq(x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter().map(|r| r.norm_squared()).collect()
}

/// Applies `desc` elementwise to a matrix of inner products in place.
fn apply_kernel(
    desc: &KernelDescriptor,
    inner: &mut DMatrix<f64>,
    norms_rows: &[f64],
    norms_cols: &[f64],
    dim: usize,
) -> Result<()> {
    let rows = inner.nrows();
    if rows == 0 {
        return Ok(());
    }
    inner
        .as_mut_slice()
        .par_chunks_mut(rows)
        .enumerate()
        .try_for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = desc.from_inner(*v, norms_rows[i], norms_cols[j], dim);
                if !v.is_finite() {
                    return Err(Error::Numerical(format!("non-finite kernel value at ({i}, {j})")));
                }
            }
            Ok(())
        })
}

/// `M x M` Gram matrix of `desc` over the rows of `points`.
pub fn gram_matrix(desc: &KernelDescriptor, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    desc.validate()?;
    if points.nrows() == 0 {
        return Err(Error::Invalid("gram matrix needs at least one point".into()));
    }
    let mut inner = points * points.transpose();
    let m = inner.nrows();
    for j in 0..m {
        for i in j + 1..m {
            inner[(i, j)] = inner[(j, i)];
        }
    }
    gram_from_inner(desc, inner, points.ncols())
}

/// Gram matrix from a symmetric matrix of inner products, overwriting it.
pub fn gram_from_inner(
    desc: &KernelDescriptor,
    mut inner: DMatrix<f64>,
    dim: usize,
) -> Result<DMatrix<f64>> {
    let norms: Vec<f64> = inner.diagonal().iter().copied().collect();
    apply_kernel(desc, &mut inner, &norms, &norms, dim)?;
    Ok(inner)
}

/// Kernel between the rows of `a` (rows of the result) and the rows of `b`.
pub fn cross_gram(desc: &KernelDescriptor, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    desc.validate()?;
    if a.ncols() != b.ncols() {
        return Err(Error::Invalid(format!(
            "point sets have dimensions {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut inner = a * b.transpose();
    apply_kernel(desc, &mut inner, &row_norms_sq(a), &row_norms_sq(b), a.ncols())?;
    Ok(inner)
}

fn check_symmetric(gram: &DMatrix<f64>) -> Result<()> {
    if !gram.is_square() || gram.nrows() == 0 {
        return Err(Error::Invalid(format!(
            "gram matrix must be square and nonempty, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let scale = gram.amax().max(f64::MIN_POSITIVE);
    let m = gram.nrows();
    for j in 0..m {
        for i in j + 1..m {
            if (gram[(i, j)] - gram[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Invalid(format!("gram matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Clips roundoff negatives to zero; rejects negatives larger than
/// `1e-8 * trace`.
fn clip_negative(eigenvalues: &mut [f64], trace: f64) -> Result<()> {
    for v in eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-8 * trace.abs() {
                return Err(Error::Numerical(format!(
                    "kernel is not positive semidefinite: eigenvalue {v:e} with trace {trace:e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Full eigendecomposition of `gram / M`.
pub fn gram_eigendecompose(gram: &DMatrix<f64>) -> Result<EigenSystem> {
    check_symmetric(gram)?;
    let m = gram.nrows();
    let mf = m as f64;
    let trace = gram.trace() / mf;
    let eig = SymmetricEigen::try_new(gram / mf, f64::EPSILON, 0).ok_or_else(|| {
        Error::Numerical(format!(
            "symmetric eigendecomposition of a {m}x{m} gram matrix (max entry {:e}) failed",
            gram.amax()
        ))
    })?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    clip_negative(&mut eigenvalues, trace)?;
    let root = mf.sqrt();
    let phi = DMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])] * root);
    Ok(EigenSystem {
        eigenvalues,
        phi,
        sample_count: m,
    })
}

/// Leading `k` eigenpairs of `gram / M` by block subspace iteration with
/// Rayleigh-Ritz extraction.
///
/// Iterates until every wanted Ritz pair has residual below
/// `1e-9 * eta_max`. Converges quickly when the spectrum has a gap just
/// below the `k`-th eigenvalue, as spectra of dot-product kernels on the
/// sphere do between degree blocks.
pub fn gram_top_eigensystem(gram: &DMatrix<f64>, k: usize, seed: u64) -> Result<EigenSystem> {
    if !gram.is_square() || gram.nrows() == 0 {
        return Err(Error::Invalid("gram matrix must be square and nonempty".into()));
    }
    let m = gram.nrows();
    if k == 0 || k > m {
        return Err(Error::Invalid(format!("cannot extract {k} eigenpairs from a {m}x{m} matrix")));
    }
    let block = (k + (k / 5).max(16)).min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = DMatrix::from_fn(m, block, |_, _| StandardNormal.sample(&mut rng));
    let mut q = start.qr().q();
    let mf = m as f64;
    let max_iter = 300;
    let mut worst = f64::INFINITY;
    for _ in 0..max_iter {
        let z = gram * &q;
        let mut h = q.tr_mul(&z);
        h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let s = DMatrix::from_fn(block, block, |i, j| eig.eigenvectors[(i, order[j])]);
        let theta: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let x = &q * &s;
        let gx = &z * &s;
        let top = theta[0].abs().max(f64::MIN_POSITIVE);
        worst = (0..k)
            .map(|j| (gx.column(j) - x.column(j) * theta[j]).norm())
            .fold(0.0, f64::max)
            / top;
        if worst <= 1e-9 {
            let mut eigenvalues: Vec<f64> = theta[..k].iter().map(|t| t / mf).collect();
            clip_negative(&mut eigenvalues, gram.trace() / mf)?;
            let phi = x.columns(0, k) * mf.sqrt();
            return Ok(EigenSystem {
                eigenvalues,
                phi,
                sample_count: m,
            });
        }
        q = gx.qr().q();
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: worst,
    })
}
