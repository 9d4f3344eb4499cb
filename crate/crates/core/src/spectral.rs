//! Kernel spectra, target decompositions and the scalar summaries derived
//! from them.
//!
//! Spectra are stored compactly: one entry per distinct eigenvalue block
//! together with its integer multiplicity. Rotation-invariant kernels on
//! high-dimensional spheres have blocks whose multiplicity grows like
//! `D^k / k!`, so nothing in the theory ever expands a spectrum to a
//! per-mode list unless explicitly asked to.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered kernel eigenvalues with multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    degeneracies: Vec<u64>,
    mode_count: u64,
}

impl Spectrum {
    /// Builds a spectrum from per-block eigenvalues (descending) and their
    /// multiplicities.
    pub fn new(eigenvalues: Vec<f64>, degeneracies: Vec<u64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Invalid("spectrum has no eigenvalues".into()));
        }
        if eigenvalues.len() != degeneracies.len() {
            return Err(Error::Invalid(format!(
                "{} eigenvalues but {} degeneracies",
                eigenvalues.len(),
                degeneracies.len()
            )));
        }
        if let Some(bad) = eigenvalues.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Invalid(format!(
                "eigenvalues must be finite and nonnegative, found {bad}"
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Invalid("eigenvalues must be sorted descending".into()));
        }
        if !eigenvalues.iter().any(|v| *v > 0.0) {
            return Err(Error::Degenerate("spectrum has no positive eigenvalue".into()));
        }
        if degeneracies.contains(&0) {
            return Err(Error::Invalid("degeneracies must be at least 1".into()));
        }
        let mode_count = degeneracies
            .iter()
            .try_fold(0u64, |acc, d| acc.checked_add(*d))
            .ok_or_else(|| Error::Domain("total mode count overflows u64".into()))?;
        Ok(Self {
            eigenvalues,
            degeneracies,
            mode_count,
        })
    }

    /// Spectrum of non-degenerate modes, sorted descending (stable) with
    /// exactly equal values merged into one block.
    pub fn from_modes(values: &[f64]) -> Result<Self> {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut eigenvalues: Vec<f64> = Vec::new();
        let mut degeneracies: Vec<u64> = Vec::new();
        for v in sorted {
            match eigenvalues.last() {
                Some(last) if *last == v => *degeneracies.last_mut().unwrap() += 1,
                _ => {
                    eigenvalues.push(v);
                    degeneracies.push(1);
                }
            }
        }
        Self::new(eigenvalues, degeneracies)
    }

    /// Sorts arbitrary `(eigenvalue, degeneracy)` blocks descending, keeping
    /// construction order among ties. Also returns, for each block of the
    /// result, the index it had in `blocks`.
    pub fn from_unsorted_blocks(blocks: &[(f64, u64)]) -> Result<(Self, Vec<usize>)> {
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        order.sort_by(|&a, &b| blocks[b].0.total_cmp(&blocks[a].0));
        let eigenvalues = order.iter().map(|&i| blocks[i].0).collect();
        let degeneracies = order.iter().map(|&i| blocks[i].1).collect();
        Ok((Self::new(eigenvalues, degeneracies)?, order))
    }

    /// Flat spectrum with `n` modes of eigenvalue `1/n`.
    pub fn band_limited(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("band-limited spectrum needs n >= 1".into()));
        }
        Self::new(vec![1.0 / n as f64], vec![n])
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn degeneracies(&self) -> &[u64] {
        &self.degeneracies
    }

    /// Number of distinct blocks.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Total number of modes after expanding degeneracies.
    pub fn mode_count(&self) -> u64 {
        self.mode_count
    }

    /// Number of modes with a strictly positive eigenvalue.
    pub fn positive_mode_count(&self) -> u64 {
        self.blocks()
            .filter(|(eta, _)| *eta > 0.0)
            .map(|(_, d)| d)
            .sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.eigenvalues
            .iter()
            .copied()
            .zip(self.degeneracies.iter().copied())
    }

    /// `sum_rho eta_rho`, the kernel's mean diagonal value.
    pub fn trace(&self) -> f64 {
        self.blocks().map(|(eta, d)| eta * d as f64).sum()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Explicit per-mode eigenvalue list.
    pub fn expanded(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mode_count as usize);
        for (eta, d) in self.blocks() {
            out.extend(std::iter::repeat_n(eta, d as usize));
        }
        out
    }
}

/// Squared teacher coefficients in the kernel eigenbasis together with the
/// label noise.
///
/// `weights_sq[i]` is the sum of `w_rho^2` over the modes of block `i` of the
/// paired [`Spectrum`]. Target power that lives on zero-eigenvalue directions
/// cannot be written in the feature basis at all and is carried separately
/// in `unlearnable_power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDecomposition {
    pub weights_sq: Vec<f64>,
    pub noise_var: f64,
    #[serde(default)]
    pub unlearnable_power: f64,
}

impl TargetDecomposition {
    pub fn new(weights_sq: Vec<f64>, noise_var: f64, unlearnable_power: f64) -> Result<Self> {
        let target = Self {
            weights_sq,
            noise_var,
            unlearnable_power,
        };
        target.validate()?;
        Ok(target)
    }

    /// Sums per-mode squared weights into the block layout of `spectrum`.
    pub fn from_mode_weights(spectrum: &Spectrum, weights_sq: &[f64], noise_var: f64) -> Result<Self> {
        if weights_sq.len() as u64 != spectrum.mode_count() {
            return Err(Error::Invalid(format!(
                "{} mode weights for a spectrum with {} modes",
                weights_sq.len(),
                spectrum.mode_count()
            )));
        }
        let mut blocks = Vec::with_capacity(spectrum.len());
        let mut offset = 0usize;
        for d in spectrum.degeneracies() {
            let d = *d as usize;
            blocks.push(weights_sq[offset..offset + d].iter().sum());
            offset += d;
        }
        Self::new(blocks, noise_var, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.weights_sq.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Invalid(format!(
                "squared weights must be finite and nonnegative, found {bad}"
            )));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::Invalid(format!("noise variance {} must be >= 0", self.noise_var)));
        }
        if !(self.unlearnable_power.is_finite() && self.unlearnable_power >= 0.0) {
            return Err(Error::Invalid(format!(
                "unlearnable power {} must be >= 0",
                self.unlearnable_power
            )));
        }
        if self.unlearnable_power == 0.0 && !self.weights_sq.iter().any(|w| *w > 0.0) {
            return Err(Error::Degenerate("target has no nonzero weight".into()));
        }
        Ok(())
    }

    pub fn check_paired(&self, spectrum: &Spectrum) -> Result<()> {
        if self.weights_sq.len() != spectrum.len() {
            return Err(Error::Invalid(format!(
                "target has {} blocks but spectrum has {}",
                self.weights_sq.len(),
                spectrum.len()
            )));
        }
        Ok(())
    }

    /// Same weights with a different label-noise variance.
    pub fn with_noise(&self, noise_var: f64) -> Self {
        Self {
            noise_var,
            ..self.clone()
        }
    }
}

/// Per-stage quantities of a rotation-invariant kernel in the learning stage
/// where `P ~ N(D, stage)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParameters {
    /// 1-based block index.
    pub stage: usize,
    /// Block eigenvalue summed over its degeneracy.
    pub eta_bar: f64,
    /// Mean squared teacher weight over the block's modes.
    pub weight_bar_sq: f64,
    pub eff_noise_sq: f64,
    pub eff_ridge: f64,
    /// Error that remains once the stage is fully learned.
    pub tail_power: f64,
}

impl StageParameters {
    /// Power carried by the stage itself, `eta_bar * weight_bar_sq`.
    pub fn stage_power(&self) -> f64 {
        self.eta_bar * self.weight_bar_sq
    }
}

/// Dimension of the space of degree-`k` spherical harmonics on `S^{D-1}`.
pub fn degeneracy(dim: u32, k: u32) -> Result<u64> {
    if dim < 2 {
        return Err(Error::Domain(format!("ambient dimension {dim} must be >= 2")));
    }
    if k == 0 {
        return Ok(1);
    }
    let overflow = || Error::Domain(format!("degeneracy N({dim}, {k}) overflows u64"));
    // N(D,k) = (2k + D - 2) / k * C(k + D - 3, k - 1)
    let n = (k + dim - 3) as u128;
    let r = (k - 1) as u128;
    let mut binom: u128 = 1;
    for i in 0..r {
        binom = binom.checked_mul(n - i).ok_or_else(overflow)? / (i + 1);
    }
    let numer = binom
        .checked_mul((2 * k + dim - 2) as u128)
        .ok_or_else(overflow)?;
    u64::try_from(numer / k as u128).map_err(|_| overflow())
}

/// Total target power `sum_rho eta_rho w_rho^2` plus the unlearnable part.
pub fn total_power(spectrum: &Spectrum, target: &TargetDecomposition) -> Result<f64> {
    target.check_paired(spectrum)?;
    let learnable: f64 = spectrum
        .eigenvalues()
        .iter()
        .zip(&target.weights_sq)
        .map(|(eta, w)| eta * w)
        .sum();
    Ok(learnable + target.unlearnable_power)
}

/// Fraction of the target power carried by the leading blocks.
///
/// Entry `i` is the power in blocks `0..=i` divided by the total power,
/// unlearnable power included; the last entry is exactly 1 whenever the
/// target has no unlearnable part.
pub fn cumulative_power(spectrum: &Spectrum, target: &TargetDecomposition) -> Result<Vec<f64>> {
    target.check_paired(spectrum)?;
    let mut partial = Vec::with_capacity(spectrum.len());
    let mut acc = 0.0;
    for (eta, w) in spectrum.eigenvalues().iter().zip(&target.weights_sq) {
        acc += eta * w;
        partial.push(acc);
    }
    let total = acc + target.unlearnable_power;
    if !(total > 0.0) {
        return Err(Error::Degenerate("target has zero total power".into()));
    }
    Ok(partial.into_iter().map(|p| p / total).collect())
}

/// Spectrum whose degree-`K` block carries summed eigenvalue `K^-s`, spread
/// evenly over the `N(D, K)` degree-`K` harmonics, for `K = 1..=k_max`.
pub fn power_law_spectrum(s: f64, k_max: u32, dim: u32) -> Result<Spectrum> {
    if !(s >= 1.0) {
        return Err(Error::Domain(format!("power-law exponent {s} must be >= 1")));
    }
    if k_max == 0 {
        return Err(Error::Domain("power-law spectrum needs at least one stage".into()));
    }
    let mut eigenvalues = Vec::with_capacity(k_max as usize);
    let mut degeneracies = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        let n = degeneracy(dim, k)?;
        eigenvalues.push((k as f64).powf(-s) / n as f64);
        degeneracies.push(n);
    }
    Spectrum::new(eigenvalues, degeneracies)
}

/// Draws one zero-mean Gaussian weight per mode with variance equal to the
/// mode's eigenvalue, in expanded mode order.
pub fn sample_mode_weights(spectrum: &Spectrum, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spectrum.mode_count() as usize);
    for (eta, d) in spectrum.blocks() {
        let sd = eta.sqrt();
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            out.push(if eta == 0.0 { 0.0 } else { sd * z });
        }
    }
    out
}

/// Random centered teacher with `<w_rho^2> = eta_rho`, summed per block.
///
/// Uses the same draw sequence as [`sample_mode_weights`] without
/// materializing the per-mode list.
pub fn sample_target(spectrum: &Spectrum, seed: u64) -> Result<TargetDecomposition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::with_capacity(spectrum.len());
    for (eta, d) in spectrum.blocks() {
        let mut acc = 0.0;
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            if eta > 0.0 {
                acc += eta * z * z;
            }
        }
        blocks.push(acc);
    }
    TargetDecomposition::new(blocks, 0.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degeneracy_small_cases() {
        assert_eq!(degeneracy(3, 0).unwrap(), 1);
        assert_eq!(degeneracy(3, 1).unwrap(), 3);
        assert_eq!(degeneracy(3, 2).unwrap(), 5);
        assert_eq!(degeneracy(2, 7).unwrap(), 2);
        assert_eq!(degeneracy(25, 1).unwrap(), 25);
        assert_eq!(degeneracy(25, 2).unwrap(), 324);
        assert_eq!(degeneracy(100, 2).unwrap(), 5049);
    }

    #[test]
    fn degeneracy_rejects_small_dimension_and_overflow() {
        assert!(matches!(degeneracy(1, 0), Err(Error::Domain(_))));
        assert!(matches!(degeneracy(100, 40), Err(Error::Domain(_))));
    }

    #[test]
    fn degeneracy_approaches_leading_asymptotic() {
        // N(D, k) / (D^k / k!) -> 1 as D grows
        let ratio = |d: u32, k: u32| {
            let lead = (d as f64).powi(k as i32) / (1..=k).map(|i| i as f64).product::<f64>();
            degeneracy(d, k).unwrap() as f64 / lead
        };
        for k in 2..5 {
            let r1 = (ratio(100, k) - 1.0).abs();
            let r2 = (ratio(10_000, k) - 1.0).abs();
            assert!(r2 < r1 && r2 < 1e-2, "k={k}: {r1} {r2}");
        }
    }

    #[test]
    fn spectrum_validation() {
        assert!(Spectrum::new(vec![0.5, 0.6], vec![1, 1]).is_err());
        assert!(Spectrum::new(vec![0.0], vec![1]).is_err());
        assert!(Spectrum::new(vec![1.0], vec![0]).is_err());
        assert!(Spectrum::new(vec![1.0, -0.1], vec![1, 1]).is_err());
        let s = Spectrum::new(vec![0.5, 0.1, 0.0], vec![1, 3, 2]).unwrap();
        assert_eq!(s.mode_count(), 6);
        assert_eq!(s.positive_mode_count(), 4);
        assert_eq!(s.expanded().len(), 6);
    }

    #[test]
    fn from_modes_groups_ties() {
        let s = Spectrum::from_modes(&[0.1, 0.5, 0.1, 0.3]).unwrap();
        assert_eq!(s.eigenvalues(), &[0.5, 0.3, 0.1]);
        assert_eq!(s.degeneracies(), &[1, 1, 2]);
    }

    #[test]
    fn unsorted_blocks_keep_tie_order() {
        let (s, order) = Spectrum::from_unsorted_blocks(&[(0.1, 1), (0.4, 3), (0.1, 5)]).unwrap();
        assert_eq!(s.eigenvalues(), &[0.4, 0.1, 0.1]);
        assert_eq!(order, vec![1, 0, 2]);
        assert_eq!(s.degeneracies(), &[3, 1, 5]);
    }

    #[test]
    fn cumulative_power_examples() {
        let one = Spectrum::new(vec![1.0], vec![1]).unwrap();
        let t = TargetDecomposition::new(vec![1.0], 0.0, 0.0).unwrap();
        assert_eq!(cumulative_power(&one, &t).unwrap(), vec![1.0]);

        let half = Spectrum::new(vec![0.5, 0.5], vec![1, 1]).unwrap();
        let t = TargetDecomposition::new(vec![1.0, 1.0], 0.0, 0.0).unwrap();
        assert_eq!(cumulative_power(&half, &t).unwrap(), vec![0.5, 1.0]);

        // partial sums of 0.6, 0.6, 0.3 over a total of 1.5
        let s = Spectrum::new(vec![0.6, 0.3, 0.1], vec![1, 1, 1]).unwrap();
        let t = TargetDecomposition::new(vec![1.0, 2.0, 3.0], 0.0, 0.0).unwrap();
        let c = cumulative_power(&s, &t).unwrap();
        for (got, want) in c.iter().zip([0.4, 0.8, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn cumulative_power_rejects_zero_power() {
        let s = Spectrum::new(vec![1.0, 0.0], vec![1, 1]).unwrap();
        let t = TargetDecomposition::new(vec![0.0, 4.0], 0.0, 0.0).unwrap();
        assert!(matches!(cumulative_power(&s, &t), Err(Error::Degenerate(_))));
    }

    #[test]
    fn power_law_examples() {
        let s = power_law_spectrum(2.0, 1, 3).unwrap();
        assert_eq!(s.degeneracies(), &[3]);
        assert!((s.eigenvalues()[0] - 1.0 / 3.0).abs() < 1e-15);

        let s = power_law_spectrum(1.0, 2, 3).unwrap();
        assert_eq!(s.degeneracies(), &[3, 5]);
        let bars: Vec<f64> = s.blocks().map(|(e, d)| e * d as f64).collect();
        assert!((bars[0] - 1.0).abs() < 1e-15 && (bars[1] - 0.5).abs() < 1e-15);

        assert!(matches!(power_law_spectrum(0.5, 3, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn sampled_target_is_deterministic_and_zero_on_null_modes() {
        let s = Spectrum::new(vec![0.5, 0.2, 0.0], vec![2, 3, 4]).unwrap();
        let a = sample_target(&s, 7).unwrap();
        let b = sample_target(&s, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights_sq[2], 0.0);
        let modes = sample_mode_weights(&s, 7);
        assert!(modes[5..].iter().all(|w| *w == 0.0));
        let from_modes: Vec<f64> = modes.iter().map(|w| w * w).collect();
        let c = TargetDecomposition::from_mode_weights(&s, &from_modes, 0.0).unwrap();
        for (x, y) in a.weights_sq.iter().zip(&c.weights_sq) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn sampled_weights_have_eigenvalue_variance() {
        // 1e5 draws of one mode with eta = 0.25: the mean of w^2 has
        // standard error 0.25 * sqrt(2 / 1e5).
        let s = Spectrum::new(vec![0.25], vec![100_000]).unwrap();
        let w = sample_mode_weights(&s, 11);
        let mean_sq = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
        let se = 0.25 * (2.0f64 / 1e5).sqrt();
        assert!((mean_sq - 0.25).abs() < 3.0 * se, "{mean_sq}");
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 3.0 * (0.25f64 / 1e5).sqrt());
    }
}
