//! Self-consistent learning-curve theory.
//!
//! For a kernel with Mercer eigenvalues `eta_rho` and teacher weights
//! `w_rho`, the generalization error of kernel ridge regression with ridge
//! `lambda` after `P` samples is
//!
//! ```text
//! E_g   = 1/(1 - gamma) * sum_rho eta_rho / (kappa + P eta_rho)^2
//!                             * (kappa^2 w_rho^2 + sigma^2 P eta_rho)
//! kappa = lambda + sum_rho kappa eta_rho / (kappa + P eta_rho)
//! gamma = sum_rho P eta_rho^2 / (kappa + P eta_rho)^2
//! ```
//!
//! Every sum here runs over compact `(eigenvalue, degeneracy)` blocks.

mod band;
mod stages;

pub use band::{
    alpha_grid, band_limited_eg, band_limited_kappa, classify_band_limited, classify_values,
    phase_boundary, BandLimited, PhaseClass, PhasePoint,
};
pub use stages::{power_law_effective_ridge, stage_parameters, staged_curve_peak, staged_eg};

use crate::error::{Error, Result};
use crate::spectral::{Spectrum, TargetDecomposition};

/// Values of `gamma` at or above `1 - DIVERGENCE_GAP` are reported as the
/// interpolation divergence.
pub const DIVERGENCE_GAP: f64 = 1e-12;

const MAX_ITERATIONS: usize = 200;

/// Solved self-consistent scalars at one sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSolution {
    pub kappa: f64,
    pub gamma: f64,
    pub diverged: bool,
}

/// Theory prediction at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct TheorySolution {
    pub sample_size: f64,
    pub kappa: f64,
    pub gamma: f64,
    /// Total generalization error; `+inf` when `diverged`.
    pub eg: f64,
    /// Normalized error of each eigenvalue block, `E_rho`.
    pub mode_errors: Vec<f64>,
    pub bias: f64,
    pub variance: f64,
    pub diverged: bool,
}

impl TheorySolution {
    /// Derivative of `eg` with respect to the label-noise variance.
    pub fn noise_slope(&self) -> f64 {
        if self.diverged {
            f64::INFINITY
        } else {
            self.gamma / (1.0 - self.gamma)
        }
    }
}

fn check_inputs(ridge: f64, p: f64) -> Result<()> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge {ridge} must be finite and >= 0")));
    }
    if !(p >= 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!("sample size {p} must be finite and >= 0")));
    }
    Ok(())
}

/// Root of an increasing function on `(lo, hi]` with `f(hi) >= 0`.
///
/// Bisects (geometrically once the bracket spans more than a factor of two)
/// and then polishes with safeguarded Newton steps.
fn increasing_root(
    f: impl Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    let mut x = hi;
    for _ in 0..MAX_ITERATIONS {
        let mid = if lo > 0.0 && hi / lo > 2.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let (v, _) = f(mid);
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        x = hi;
        if hi - lo <= 1e-6 * hi {
            break;
        }
    }
    let mut residual = f(x).0;
    for _ in 0..MAX_ITERATIONS {
        let (v, dv) = f(x);
        residual = v;
        if v == 0.0 || !(dv > 0.0) {
            return Ok(x);
        }
        if v < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let mut next = x - v / dv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return Ok(next);
        }
        x = next;
    }
    if residual.abs() < 1e-13 {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        iterations: 2 * MAX_ITERATIONS,
        residual,
    })
}

fn gamma_at(spectrum: &Spectrum, kappa: f64, p: f64) -> f64 {
    spectrum
        .blocks()
        .filter(|(eta, _)| *eta > 0.0)
        .map(|(eta, d)| {
            let x = p * eta;
            d as f64 * x * eta / ((kappa + x) * (kappa + x))
        })
        .sum()
}

/// Solves the self-consistent equation for `kappa` and evaluates `gamma`.
///
/// With `lambda = 0` and more samples than positive modes the solution is
/// `kappa = 0`; exactly at the mode count the solution is flagged as the
/// interpolation divergence.
pub fn solve_kappa(spectrum: &Spectrum, ridge: f64, p: f64) -> Result<KappaSolution> {
    check_inputs(ridge, p)?;
    let trace = spectrum.trace();
    if p == 0.0 {
        return Ok(KappaSolution {
            kappa: ridge + trace,
            gamma: 0.0,
            diverged: false,
        });
    }
    let positive = spectrum.positive_mode_count() as f64;
    if ridge == 0.0 && p >= positive {
        let diverged = p == positive;
        return Ok(KappaSolution {
            kappa: 0.0,
            gamma: if diverged { 1.0 } else { positive / p },
            diverged,
        });
    }
    // h(k) = 1 - lambda/k - sum d eta / (k + P eta), increasing in k, with
    // the fixed-point residual equal to k h(k).
    let h = |k: f64| {
        let mut v = 1.0 - ridge / k;
        let mut dv = ridge / (k * k);
        for (eta, d) in spectrum.blocks() {
            if eta > 0.0 {
                let den = k + p * eta;
                let t = d as f64 * eta / den;
                v -= t;
                dv += t / den;
            }
        }
        (v, dv)
    };
    let kappa = increasing_root(h, ridge, ridge + trace)?;
    let gamma = gamma_at(spectrum, kappa, p);
    Ok(KappaSolution {
        kappa,
        gamma,
        diverged: gamma >= 1.0 - DIVERGENCE_GAP,
    })
}

/// Absolute fixed-point residual `|kappa - lambda - sum kappa eta/(kappa + P eta)|`.
pub fn kappa_residual(spectrum: &Spectrum, ridge: f64, p: f64, kappa: f64) -> f64 {
    let sum: f64 = spectrum
        .blocks()
        .filter(|(eta, _)| *eta > 0.0)
        .map(|(eta, d)| d as f64 * kappa * eta / (kappa + p * eta))
        .sum();
    (kappa - ridge - sum).abs()
}

/// Full theory prediction at sample size `p`.
///
/// Target power on zero-eigenvalue directions (`unlearnable_power`) is added
/// to the label noise and, since it can never be learned, also to the bias.
pub fn generalization_error(
    spectrum: &Spectrum,
    target: &TargetDecomposition,
    ridge: f64,
    p: f64,
) -> Result<TheorySolution> {
    target.check_paired(spectrum)?;
    let sol = solve_kappa(spectrum, ridge, p)?;
    let (kappa, gamma) = (sol.kappa, sol.gamma);
    let unlearnable = target.unlearnable_power;
    let eff_noise = target.noise_var + unlearnable;

    let mut learnable_bias = 0.0;
    let mut mode_errors = Vec::with_capacity(spectrum.len());
    let inv_gap = if sol.diverged { f64::INFINITY } else { 1.0 / (1.0 - gamma) };
    for ((eta, _), w) in spectrum.blocks().zip(&target.weights_sq) {
        if eta == 0.0 {
            mode_errors.push(inv_gap);
            continue;
        }
        let den = kappa + p * eta;
        let shrink = if kappa == 0.0 { 0.0 } else { (kappa / den) * (kappa / den) };
        learnable_bias += eta * w * shrink;
        mode_errors.push(if shrink == 0.0 { 0.0 } else { shrink * inv_gap });
    }
    let bias = learnable_bias + unlearnable;
    let variance = if sol.diverged {
        f64::INFINITY
    } else {
        gamma * (learnable_bias + eff_noise) / (1.0 - gamma)
    };
    Ok(TheorySolution {
        sample_size: p,
        kappa,
        gamma,
        eg: bias + variance,
        mode_errors,
        bias,
        variance,
        diverged: sol.diverged,
    })
}

/// Theory bias and variance `(B, V)` at sample size `p`.
pub fn theory_bias_variance(
    spectrum: &Spectrum,
    target: &TargetDecomposition,
    ridge: f64,
    p: f64,
) -> Result<(f64, f64)> {
    let sol = generalization_error(spectrum, target, ridge, p)?;
    Ok((sol.bias, sol.variance))
}

/// Normalized mode errors `E_rho` per block at sample size `p`.
pub fn mode_errors(spectrum: &Spectrum, ridge: f64, p: f64) -> Result<Vec<f64>> {
    let unit = TargetDecomposition {
        weights_sq: vec![1.0; spectrum.len()],
        noise_var: 0.0,
        unlearnable_power: 0.0,
    };
    Ok(generalization_error(spectrum, &unit, ridge, p)?.mode_errors)
}

/// Checks that mode errors order opposite to eigenvalues at every grid
/// point: larger eigenvalues have strictly smaller errors.
///
/// At `P = 0` every error equals 1, and modes that are already fit exactly
/// (error 0, only possible with `lambda = 0`) are treated as tied.
pub fn mode_error_ordering_check(spectrum: &Spectrum, ridge: f64, p_grid: &[f64]) -> Result<bool> {
    for &p in p_grid {
        let errors = mode_errors(spectrum, ridge, p)?;
        for pair in errors.windows(2) {
            let ok = if p == 0.0 {
                pair[0] == pair[1]
            } else {
                pair[0] < pair[1] || (pair[0] == 0.0 && pair[1] == 0.0)
            };
            if !ok {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Shrinkage `P eta / (P eta + kappa)` of the average estimator per block.
pub fn average_estimator_ratios(spectrum: &Spectrum, ridge: f64, p: f64) -> Result<Vec<f64>> {
    let sol = solve_kappa(spectrum, ridge, p)?;
    Ok(spectrum
        .blocks()
        .map(|(eta, _)| {
            let x = p * eta;
            if x == 0.0 {
                0.0
            } else {
                x / (x + sol.kappa)
            }
        })
        .collect())
}

/// Coefficients `<w*_rho> = P eta / (P eta + kappa) * w_rho` of the
/// dataset-averaged estimator, for signed per-mode teacher weights in
/// expanded mode order.
pub fn average_estimator_coeffs(
    spectrum: &Spectrum,
    mode_weights: &[f64],
    ridge: f64,
    p: f64,
) -> Result<Vec<f64>> {
    if mode_weights.len() as u64 != spectrum.mode_count() {
        return Err(Error::Invalid(format!(
            "{} mode weights for a spectrum with {} modes",
            mode_weights.len(),
            spectrum.mode_count()
        )));
    }
    let ratios = average_estimator_ratios(spectrum, ridge, p)?;
    let mut out = Vec::with_capacity(mode_weights.len());
    let mut weights = mode_weights.iter();
    for (r, d) in ratios.iter().zip(spectrum.degeneracies()) {
        for w in weights.by_ref().take(*d as usize) {
            out.push(r * w);
        }
    }
    Ok(out)
}

/// Theory curve over a grid of sample sizes.
pub fn learning_curve(
    spectrum: &Spectrum,
    target: &TargetDecomposition,
    ridge: f64,
    p_grid: &[f64],
) -> Result<Vec<TheorySolution>> {
    p_grid
        .iter()
        .map(|&p| generalization_error(spectrum, target, ridge, p))
        .collect()
}

/// Classifies a theory curve by the sign pattern of its finite-difference
/// derivative over an increasing sample-size grid.
pub fn classify_curve(
    spectrum: &Spectrum,
    target: &TargetDecomposition,
    ridge: f64,
    p_grid: &[f64],
) -> Result<PhaseClass> {
    if p_grid.len() < 16 {
        return Err(Error::Invalid(format!(
            "classification grid needs at least 16 points, got {}",
            p_grid.len()
        )));
    }
    if p_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("classification grid must be strictly increasing".into()));
    }
    let values: Vec<f64> = learning_curve(spectrum, target, ridge, p_grid)?
        .iter()
        .map(|s| s.eg)
        .collect();
    Ok(classify_values(&values))
}

/// The ridge minimizing the band-limited error at every sample size.
pub fn optimal_ridge(noise_sq: f64) -> Result<f64> {
    if !(noise_sq >= 0.0) || !noise_sq.is_finite() {
        return Err(Error::Domain(format!("noise variance {noise_sq} must be >= 0")));
    }
    Ok(noise_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::total_power;
    use proptest::prelude::*;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::from_modes(v).unwrap()
    }

    fn target(w: &[f64], noise: f64) -> TargetDecomposition {
        TargetDecomposition::new(w.to_vec(), noise, 0.0).unwrap()
    }

    /// Plain bisection on the fixed-point residual, written independently of
    /// the solver.
    fn bisection_oracle(eta: &[f64], ridge: f64, p: f64) -> f64 {
        let r = |k: f64| k - ridge - eta.iter().map(|e| k * e / (k + p * e)).sum::<f64>();
        let (mut lo, mut hi) = (1e-300, ridge + eta.iter().sum::<f64>());
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if r(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn kappa_at_zero_samples() {
        let s = Spectrum::new(vec![0.5], vec![2]).unwrap();
        let sol = solve_kappa(&s, 0.1, 0.0).unwrap();
        assert!((sol.kappa - 1.1).abs() < 1e-15);
        assert_eq!(sol.gamma, 0.0);
    }

    #[test]
    fn single_mode_interpolation() {
        let s = spec(&[0.7]);
        let sol = solve_kappa(&s, 0.0, 2.0).unwrap();
        assert_eq!(sol.kappa, 0.0);
        assert!((sol.gamma - 0.5).abs() < 1e-15);
        assert!(!sol.diverged);
        assert!(solve_kappa(&s, 0.0, 1.0).unwrap().diverged);
    }

    #[test]
    fn kappa_matches_bisection() {
        let eta = [0.6, 0.3, 0.1];
        let sol = solve_kappa(&spec(&eta), 0.01, 10.0).unwrap();
        let oracle = bisection_oracle(&eta, 0.01, 10.0);
        assert!((sol.kappa - oracle).abs() < 1e-12, "{} vs {oracle}", sol.kappa);
        // lambda = 0 below the mode count
        let eta = [0.5, 0.25, 0.125, 0.0625];
        let sol = solve_kappa(&spec(&eta), 0.0, 2.5).unwrap();
        let oracle = bisection_oracle(&eta, 0.0, 2.5);
        assert!((sol.kappa - oracle).abs() < 1e-12);
    }

    #[test]
    fn zero_samples_gives_total_power() {
        let s = spec(&[0.6, 0.3, 0.1]);
        let t = target(&[1.0, 2.0, 3.0], 0.4);
        let sol = generalization_error(&s, &t, 0.2, 0.0).unwrap();
        assert!((sol.eg - total_power(&s, &t).unwrap()).abs() < 1e-15);
        assert!((sol.bias - sol.eg).abs() < 1e-15);
        assert_eq!(sol.variance, 0.0);
        assert!(sol.mode_errors.iter().all(|e| *e == 1.0));
    }

    #[test]
    fn band_limited_half_alpha() {
        let n = 1000u64;
        let s = Spectrum::band_limited(n).unwrap();
        let t = target(&[n as f64], 0.0);
        let e0 = generalization_error(&s, &t, 0.0, 0.0).unwrap().eg;
        let e = generalization_error(&s, &t, 0.0, 500.0).unwrap();
        assert!((e.eg / e0 - 0.5).abs() < 1e-12);
        // B = (1 - alpha)^2 and V = alpha (1 - alpha)
        assert!((e.bias - 0.25).abs() < 1e-12);
        assert!((e.variance - 0.25).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_flagged() {
        let s = Spectrum::band_limited(100).unwrap();
        let t = target(&[100.0], 0.1);
        let sol = generalization_error(&s, &t, 0.0, 100.0).unwrap();
        assert!(sol.diverged && sol.eg.is_infinite() && sol.bias.is_finite());
        let sol = generalization_error(&s, &t, 0.0, 200.0).unwrap();
        // sigma^2 / (alpha - 1)
        assert!((sol.eg - 0.1).abs() < 1e-14);
    }

    #[test]
    fn variance_dominates_near_threshold() {
        let s = Spectrum::band_limited(1000).unwrap();
        let t = target(&[1000.0], 0.2);
        let near = generalization_error(&s, &t, 0.0, 990.0).unwrap();
        let mid = generalization_error(&s, &t, 0.0, 900.0).unwrap();
        assert!(near.variance > 10.0 * near.bias);
        assert!(near.variance > 5.0 * mid.variance);
    }

    #[test]
    fn unlearnable_power_acts_as_noise() {
        let s = spec(&[0.5, 0.3]);
        let with_u = TargetDecomposition::new(vec![1.0, 1.0], 0.1, 0.2).unwrap();
        let as_noise = TargetDecomposition::new(vec![1.0, 1.0], 0.3, 0.0).unwrap();
        let a = generalization_error(&s, &with_u, 0.05, 7.0).unwrap();
        let b = generalization_error(&s, &as_noise, 0.05, 7.0).unwrap();
        assert!((a.eg - (b.eg + 0.2)).abs() < 1e-14);
        assert!((a.bias - (b.bias + 0.2)).abs() < 1e-14);
        let zero = generalization_error(&s, &with_u, 0.05, 0.0).unwrap();
        assert!((zero.eg - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ordering_check_examples() {
        let s = spec(&[0.4, 0.3, 0.2, 0.1]);
        assert!(mode_error_ordering_check(&s, 0.01, &[0.0, 1.0, 3.0, 10.0, 1e4]).unwrap());
        let tied = Spectrum::new(vec![0.25], vec![4]).unwrap();
        let e = mode_errors(&tied, 0.0, 2.0).unwrap();
        assert_eq!(e.len(), 1);
        let expanded = spec(&[0.25, 0.25, 0.25, 0.25]);
        assert_eq!(mode_errors(&expanded, 0.0, 2.0).unwrap(), e);
    }

    #[test]
    fn average_estimator_examples() {
        let s = Spectrum::band_limited(400).unwrap();
        let w: Vec<f64> = (0..400).map(|i| (i as f64).sin()).collect();
        assert!(average_estimator_coeffs(&s, &w, 0.0, 0.0).unwrap().iter().all(|c| *c == 0.0));
        let r = average_estimator_ratios(&s, 0.0, 100.0).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-12);
        let s = spec(&[0.5, 0.2, 0.01]);
        let mut last = vec![0.0; 3];
        for p in [1.0, 10.0, 100.0, 1e4, 1e7] {
            let r = average_estimator_ratios(&s, 0.1, p).unwrap();
            for (a, b) in r.iter().zip(&last) {
                assert!(*a > *b && *a < 1.0);
            }
            last = r;
        }
        assert!(last.iter().all(|r| *r > 0.999));
    }

    #[test]
    fn classify_curve_rejects_short_grid() {
        let s = spec(&[0.5, 0.2]);
        let t = target(&[1.0, 1.0], 0.0);
        let grid: Vec<f64> = (1..10).map(|i| i as f64).collect();
        assert!(matches!(classify_curve(&s, &t, 0.1, &grid), Err(Error::Invalid(_))));
    }

    #[test]
    fn optimal_ridge_values() {
        assert_eq!(optimal_ridge(0.0).unwrap(), 0.0);
        assert_eq!(optimal_ridge(1.0).unwrap(), 1.0);
        assert!(optimal_ridge(-1.0).is_err());
    }

    fn arb_problem() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64, f64)> {
        (1usize..30)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(1e-4f64..1.0, n),
                    prop::collection::vec(0.0f64..3.0, n),
                    1e-4f64..2.0,
                    0.0f64..500.0,
                    0.0f64..2.0,
                )
            })
            .prop_filter("nonzero target", |(_, w, ..)| w.iter().any(|x| *x > 0.0))
    }

    proptest! {
        #[test]
        fn self_consistency((eta, w, ridge, p, noise) in arb_problem()) {
            let s = spec(&eta);
            let mut sorted = eta.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            // regroup weights to the sorted block order
            let mut order: Vec<usize> = (0..eta.len()).collect();
            order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]));
            let mut blocks = vec![0.0; s.len()];
            let mut bi = 0;
            for (k, &i) in order.iter().enumerate() {
                if k > 0 && sorted[k] != sorted[k - 1] { bi += 1; }
                blocks[bi] += w[i];
            }
            let t = TargetDecomposition::new(blocks, noise, 0.0).unwrap();
            let sol = generalization_error(&s, &t, ridge, p).unwrap();
            let res = kappa_residual(&s, ridge, p, sol.kappa);
            prop_assert!(res < 1e-10 * (ridge + s.trace()).max(sol.kappa));
            prop_assert!(sol.gamma < 1.0);
            prop_assert!(sol.variance >= 0.0);
            prop_assert!((sol.bias + sol.variance - sol.eg).abs() <= 1e-10 * sol.eg);
        }

        #[test]
        fn error_is_affine_in_noise((eta, w, ridge, p, _) in arb_problem()) {
            let s = spec(&eta);
            let blocks = vec![w.iter().sum::<f64>() / s.len() as f64; s.len()];
            let at = |n: f64| {
                generalization_error(&s, &TargetDecomposition::new(blocks.clone(), n, 0.0).unwrap(), ridge, p).unwrap()
            };
            let (a, b, c) = (at(0.0), at(0.5), at(1.5));
            let slope = a.noise_slope();
            prop_assert!(((b.eg - a.eg) - 0.5 * slope).abs() <= 1e-10 * b.eg.max(1e-300));
            prop_assert!(((c.eg - b.eg) - 2.0 * (b.eg - a.eg)).abs() <= 1e-10 * c.eg);
        }

        #[test]
        fn kappa_decreases_with_p((eta, _, ridge, _, _) in arb_problem()) {
            let s = spec(&eta);
            let mut last = f64::INFINITY;
            for i in 0..20 {
                let p = 0.5 * 1.6f64.powi(i);
                let k = solve_kappa(&s, ridge, p).unwrap().kappa;
                prop_assert!(k < last);
                last = k;
            }
        }
    }
}
