//! Spectra of dot-product kernels on the unit sphere.
//!
//! A kernel `K(x . x')` on `S^{D-1}` is diagonalized by spherical harmonics;
//! all `N(D, k)` harmonics of degree `k` share the eigenvalue
//!
//! ```text
//! eta_k = E_t[ K(t) P_k(t) ],   t ~ (1 - t^2)^{(D-3)/2} on [-1, 1]
//! ```
//!
//! where `P_k` is the Gegenbauer polynomial normalized to `P_k(1) = 1`. With
//! this normalization `sum_k N(D, k) eta_k = K(1)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::degeneracy;

const MAX_ORDER: usize = 8192;

/// Eigenvalues of a symmetric tridiagonal matrix together with the first
/// component of each normalized eigenvector, by implicit QL with Wilkinson
/// shifts.
///
/// `diag` is overwritten with the eigenvalues; `off[i]` couples rows `i` and
/// `i + 1` and is destroyed.
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    if n == 1 {
        return Ok(z);
    }
    let mut e = off.to_vec();
    e.resize(n, 0.0);
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: e[l].abs(),
                });
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(z)
}

/// `n`-point Gauss rule for the weight `(1 - t^2)^a` on `[-1, 1]`, with
/// weights normalized to sum to one. Nodes are ascending.
pub fn gauss_jacobi(n: usize, a: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Domain("quadrature order must be >= 1".into()));
    }
    if !(a > -1.0) {
        return Err(Error::Domain(format!("weight exponent {a} must exceed -1")));
    }
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            (k * (k + 2.0 * a) / (4.0 * (k + a) * (k + a) - 1.0)).sqrt()
        })
        .collect();
    let z = tridiagonal_ql(&mut diag, &mut off)?;
    let mut pairs: Vec<(f64, f64)> = diag.into_iter().zip(z.into_iter().map(|v| v * v)).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(pairs.into_iter().map(|(t, w)| (t, w / total)).unzip())
}

/// Values of `P_0..=P_{k_max}` at `t` for dimension `dim`, normalized so
/// that `P_k(1) = 1`.
pub fn gegenbauer_all(dim: u32, k_max: u32, t: f64) -> Vec<f64> {
    let d = dim as f64;
    let mut out = Vec::with_capacity(k_max as usize + 1);
    out.push(1.0);
    if k_max >= 1 {
        out.push(t);
    }
    for k in 2..=k_max as usize {
        let kf = k as f64;
        let v = ((2.0 * kf + d - 4.0) * t * out[k - 1] - (kf - 1.0) * out[k - 2]) / (kf + d - 3.0);
        out.push(v);
    }
    out
}

/// Normalized Gegenbauer polynomial `P_k(t)` for dimension `dim >= 3`.
pub fn gegenbauer(dim: u32, k: u32, t: f64) -> f64 {
    gegenbauer_all(dim, k, t)[k as usize]
}

fn project(profile: &(dyn Fn(f64) -> f64 + Sync), dim: u32, k_max: u32, n: usize) -> Result<Vec<f64>> {
    let (nodes, weights) = gauss_jacobi(n, (dim as f64 - 3.0) / 2.0)?;
    let partial = nodes
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&t, &w)| {
            let kv = profile(t) * w;
            gegenbauer_all(dim, k_max, t).into_iter().map(|p| p * kv).collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    let mut eta = vec![0.0; k_max as usize + 1];
    for row in &partial {
        for (e, v) in eta.iter_mut().zip(row) {
            *e += v;
        }
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel profile produced a non-finite value".into()));
    }
    Ok(eta)
}

/// Per-degree eigenvalues `eta_0..=eta_{k_max}` of a dot-product kernel on
/// `S^{dim-1}` (each with multiplicity `N(dim, k)`).
///
/// The quadrature order is doubled until successive estimates agree to
/// `1e-8` relative (with an absolute floor of `1e-14 K(1)`). Negative
/// values down to `-1e-10 K(1)` are roundoff and clipped to zero.
pub fn dot_product_eigenvalues(
    profile: &(dyn Fn(f64) -> f64 + Sync),
    dim: u32,
    k_max: u32,
) -> Result<Vec<f64>> {
    if dim < 3 {
        return Err(Error::Domain(format!("quadrature needs dimension >= 3, got {dim}")));
    }
    let scale = profile(1.0).abs().max(f64::MIN_POSITIVE);
    let mut n = (2 * k_max as usize + 2).max(32);
    let mut prev = project(profile, dim, k_max, n)?;
    loop {
        n *= 2;
        if n > MAX_ORDER {
            return Err(Error::Precision(format!(
                "kernel eigenvalues did not settle to 1e-8 by quadrature order {MAX_ORDER}"
            )));
        }
        let next = project(profile, dim, k_max, n)?;
        let settled = prev
            .iter()
            .zip(&next)
            .all(|(a, b)| (a - b).abs() <= (1e-8 * b.abs()).max(1e-14 * scale));
        prev = next;
        if settled {
            break;
        }
    }
    for v in prev.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 * scale {
                return Err(Error::Numerical(format!(
                    "profile is not positive definite on the sphere: eigenvalue {v:e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(prev)
}

/// Effective ridge `(lambda + sum_{k>l} eta_bar_k) / eta_bar_l` for each
/// degree `l = 0..=l_max`, with `eta_bar_k = N(dim, k) eta_k`.
///
/// The tail beyond `l` is the trace remainder `K(1) - sum_{k<=l} eta_bar_k`,
/// so no truncation of the spectrum enters. Degrees with zero eigenvalue get
/// an infinite entry.
pub fn effective_regularization_table(
    profile: &(dyn Fn(f64) -> f64 + Sync),
    dim: u32,
    l_max: u32,
    ridge: f64,
) -> Result<Vec<f64>> {
    if !(ridge >= 0.0) {
        return Err(Error::Domain(format!("ridge {ridge} must be >= 0")));
    }
    let eta = dot_product_eigenvalues(profile, dim, l_max)?;
    let trace = profile(1.0);
    let mut head = 0.0;
    let mut out = Vec::with_capacity(eta.len());
    for (k, e) in eta.iter().enumerate() {
        let bar = degeneracy(dim, k as u32)? as f64 * e;
        head += bar;
        let mut remainder = trace - head;
        if remainder < 0.0 {
            if remainder < -1e-8 * trace.abs() {
                return Err(Error::Precision(format!(
                    "spectrum through degree {k} exceeds the kernel trace by {:e}",
                    -remainder
                )));
            }
            remainder = 0.0;
        }
        // roundoff on degrees the profile does not contain
        out.push(if bar > 1e-13 * trace.abs() { (ridge + remainder) / bar } else { f64::INFINITY });
    }
    Ok(out)
}
