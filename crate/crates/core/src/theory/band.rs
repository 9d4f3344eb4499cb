//! Closed forms for band-limited spectra and the double-descent phase
//! diagram.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error value of a closed-form curve, with the interpolation divergence
/// made explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandLimited {
    pub kappa: f64,
    pub eg: f64,
    pub diverged: bool,
}

/// Shape of a learning curve as a function of sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseClass {
    Monotone,
    SinglePeak,
    DipThenPeak,
}

impl PhaseClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseClass::Monotone => "monotone",
            PhaseClass::SinglePeak => "single_peak",
            PhaseClass::DipThenPeak => "dip_then_peak",
        }
    }

    /// Region of the band-limited phase diagram that contains `(ridge, noise_sq)`.
    pub fn predicted(ridge: f64, noise_sq: f64) -> Result<Self> {
        let lower = phase_boundary(ridge)?;
        let upper = 2.0 * ridge + 1.0;
        Ok(if noise_sq <= lower {
            PhaseClass::Monotone
        } else if noise_sq > upper {
            PhaseClass::SinglePeak
        } else {
            PhaseClass::DipThenPeak
        })
    }
}

impl std::fmt::Display for PhaseClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One cell of a phase diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub ridge: f64,
    pub noise_sq: f64,
    pub classification: PhaseClass,
}

/// Positive root of `kappa^2 - (1 + lambda - alpha) kappa - lambda alpha = 0`.
pub fn band_limited_kappa(alpha: f64, ridge: f64) -> f64 {
    let b = 1.0 + ridge - alpha;
    let root = (b * b + 4.0 * ridge * alpha).sqrt();
    if b >= 0.0 {
        0.5 * (b + root)
    } else {
        // avoids cancellation for alpha > 1 + lambda
        2.0 * ridge * alpha / (root - b)
    }
}

/// Generalization error for a flat spectrum of `N` modes with unit total
/// target power at `alpha = P/N`.
pub fn band_limited_eg(alpha: f64, ridge: f64, noise_sq: f64) -> Result<BandLimited> {
    for (name, v) in [("alpha", alpha), ("ridge", ridge), ("noise variance", noise_sq)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} {v} must be finite and >= 0")));
        }
    }
    let kappa = band_limited_kappa(alpha, ridge);
    let den = (kappa + alpha) * (kappa + alpha) - alpha;
    if !(den > 0.0) {
        return Ok(BandLimited {
            kappa,
            eg: f64::INFINITY,
            diverged: true,
        });
    }
    Ok(BandLimited {
        kappa,
        eg: (kappa * kappa + noise_sq * alpha) / den,
        diverged: false,
    })
}

/// Noise level separating monotone learning curves from non-monotone ones
/// on a band-limited spectrum.
///
/// Below the threshold the curve decreases monotonically; above `2 lambda + 1`
/// it has a single maximum; in between (only possible for `lambda < 1`) it
/// first dips and then peaks.
pub fn phase_boundary(ridge: f64) -> Result<f64> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge {ridge} must be finite and >= 0")));
    }
    if ridge >= 1.0 {
        return Ok(2.0 * ridge + 1.0);
    }
    let l = ridge;
    // atan2 keeps the branch of the inverse tangent continuous where
    // 9 lambda (3 lambda + 2) - 1 changes sign.
    let theta = (PI + (8.0 * l.sqrt()).atan2(9.0 * l * (3.0 * l + 2.0) - 1.0)) / 3.0;
    Ok(3.0 * l * (3.0 * l + 2.0 - 2.0 * (1.0 + l).sqrt() * (9.0 * l + 1.0).sqrt() * theta.cos()))
}

/// Log-spaced grid with `per_decade` points per decade on `[lo, hi]`.
pub fn alpha_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    let n = ((b - a) * per_decade as f64).round() as usize;
    (0..=n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / n as f64))
        .collect()
}

/// Classifies sampled curve values by the sign pattern of their successive
/// differences.
///
/// Differences smaller than `1e-9` of the largest finite value are ignored.
/// Infinite values (divergences) are kept: they register as a rise followed
/// by a fall.
pub fn classify_values(values: &[f64]) -> PhaseClass {
    let scale = values
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut signs: Vec<i8> = Vec::new();
    for w in values.windows(2) {
        let d = w[1] - w[0];
        let s = if d.is_nan() || d.abs() <= tol {
            0
        } else if d > 0.0 {
            1
        } else {
            -1
        };
        if s != 0 && signs.last() != Some(&s) {
            signs.push(s);
        }
    }
    match signs.iter().position(|s| *s > 0) {
        None => PhaseClass::Monotone,
        Some(0) => PhaseClass::SinglePeak,
        Some(_) => PhaseClass::DipThenPeak,
    }
}

/// Classifies the band-limited curve at `(ridge, noise_sq)` on a log grid
/// over `alpha in [1e-3, 1e3]`.
pub fn classify_band_limited(ridge: f64, noise_sq: f64) -> Result<PhaseClass> {
    let mut values = Vec::new();
    for a in alpha_grid(1e-3, 1e3, 200) {
        let b = band_limited_eg(a, ridge, noise_sq)?;
        // without noise the flagged point at alpha = 1 has limit 0 from
        // both sides, so it is not a peak
        if !(b.diverged && noise_sq == 0.0) {
            values.push(b.eg);
        }
    }
    Ok(classify_values(&values))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smallest noise level whose curve is not monotone, by bisection on
    /// the numeric classification.
    fn numeric_threshold(ridge: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 2.0 * ridge + 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if classify_band_limited(ridge, mid).unwrap() == PhaseClass::Monotone {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn noise_free_interpolation_curve_is_monotone() {
        assert_eq!(classify_band_limited(0.0, 0.0).unwrap(), PhaseClass::Monotone);
        assert_eq!(classify_band_limited(0.0, 1e-3).unwrap(), PhaseClass::DipThenPeak);
    }

    #[test]
    fn noise_free_interpolation_is_linear() {
        for a in [0.0, 0.1, 0.25, 0.5, 0.75, 0.99] {
            let e = band_limited_eg(a, 0.0, 0.0).unwrap();
            assert!((e.eg - (1.0 - a)).abs() < 1e-14);
        }
        let e = band_limited_eg(1.0, 0.0, 0.0).unwrap();
        assert!(e.diverged && e.eg.is_infinite());
    }

    #[test]
    fn noisy_interpolation_diverges() {
        let near = band_limited_eg(0.999, 0.0, 0.5).unwrap().eg;
        let far = band_limited_eg(0.5, 0.0, 0.5).unwrap().eg;
        assert!(near > 100.0 * far);
        assert!(band_limited_eg(1.0, 0.0, 0.5).unwrap().diverged);
        assert!((band_limited_eg(3.0, 0.0, 0.5).unwrap().eg - 0.25).abs() < 1e-15);
    }

    #[test]
    fn boundary_values() {
        assert_eq!(phase_boundary(0.0).unwrap(), 0.0);
        assert_eq!(phase_boundary(2.0).unwrap(), 5.0);
        let l = 1.0 - 1e-12;
        assert!((phase_boundary(l).unwrap() - 3.0).abs() < 1e-9);
        assert!(phase_boundary(-0.1).is_err());
    }

    #[test]
    fn boundary_matches_numeric_zero_count() {
        for l in [0.01, 0.03, 0.1, 0.3, 0.5, 0.8] {
            let g = phase_boundary(l).unwrap();
            let n = numeric_threshold(l);
            assert!((g - n).abs() < 2e-3 * g.max(0.05), "lambda={l}: {g} vs {n}");
        }
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_band_limited(1.0, 10.0).unwrap(), PhaseClass::SinglePeak);
        assert_eq!(classify_band_limited(0.1, 0.0).unwrap(), PhaseClass::Monotone);
        let l = 0.5;
        let s2 = 0.5 * (phase_boundary(l).unwrap() + 2.0 * l + 1.0);
        assert_eq!(classify_band_limited(l, s2).unwrap(), PhaseClass::DipThenPeak);
        for s2 in [0.01, 0.5, 2.0] {
            assert_ne!(classify_band_limited(0.0, s2).unwrap(), PhaseClass::Monotone);
        }
    }

    #[test]
    fn classify_values_patterns() {
        assert_eq!(classify_values(&[3.0, 2.0, 1.0, 1.0]), PhaseClass::Monotone);
        assert_eq!(classify_values(&[1.0, 2.0, 3.0, 2.0]), PhaseClass::SinglePeak);
        assert_eq!(classify_values(&[3.0, 2.0, 3.0, 1.0]), PhaseClass::DipThenPeak);
        assert_eq!(
            classify_values(&[3.0, 2.0, f64::INFINITY, 1.0, 0.5]),
            PhaseClass::DipThenPeak
        );
    }

    #[test]
    fn optimal_ridge_minimizes_on_grid() {
        let s2 = 0.3;
        for a in [0.5, 1.0, 2.0] {
            let grid: Vec<f64> = (0..50).map(|i| 3.0 * i as f64 / 49.0).collect();
            let best = grid
                .iter()
                .copied()
                .min_by(|x, y| {
                    let ex = band_limited_eg(a, *x, s2).unwrap().eg;
                    let ey = band_limited_eg(a, *y, s2).unwrap().eg;
                    ex.total_cmp(&ey)
                })
                .unwrap();
            assert!((best - s2).abs() <= 3.0 / 49.0, "alpha={a}: {best}");
            let at_opt = band_limited_eg(a, s2, s2).unwrap().eg;
            for l in &grid {
                assert!(at_opt <= band_limited_eg(a, *l, s2).unwrap().eg + 1e-15);
            }
        }
    }
}
