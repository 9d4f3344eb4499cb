//! Learning-stage approximation for spectra with large degenerate blocks.
//!
//! When `P` is comparable to the size `N(D, L)` of block `L`, blocks before
//! `L` are already learned, and blocks after it are too small to be learned:
//! their eigenvalues act as extra ridge and their target power as extra
//! noise. The block itself then behaves like a band-limited problem.

use crate::error::{Error, Result};
use crate::spectral::{Spectrum, StageParameters, TargetDecomposition};
use crate::special::hurwitz_zeta;

use super::band::{band_limited_eg, classify_values, BandLimited, PhaseClass};

/// Effective parameters of learning stage `stage` (1-based block index).
pub fn stage_parameters(
    spectrum: &Spectrum,
    target: &TargetDecomposition,
    ridge: f64,
    stage: usize,
) -> Result<StageParameters> {
    target.check_paired(spectrum)?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge {ridge} must be finite and >= 0")));
    }
    if stage == 0 || stage > spectrum.len() {
        return Err(Error::Domain(format!(
            "stage {stage} outside 1..={}",
            spectrum.len()
        )));
    }
    let i = stage - 1;
    let d = spectrum.degeneracies()[i] as f64;
    let eta_bar = spectrum.eigenvalues()[i] * d;
    if !(eta_bar > 0.0) {
        return Err(Error::Degenerate(format!("stage {stage} has zero eigenvalue")));
    }
    let weight_bar_sq = target.weights_sq[i] / d;
    if !(weight_bar_sq > 0.0) {
        return Err(Error::Degenerate(format!(
            "stage {stage} has zero target weight; effective noise undefined"
        )));
    }
    let mut tail_eig = 0.0;
    let mut tail_power = target.unlearnable_power;
    for ((eta, d), w) in spectrum.blocks().zip(&target.weights_sq).skip(stage) {
        tail_eig += eta * d as f64;
        tail_power += eta * w;
    }
    let stage_power = eta_bar * weight_bar_sq;
    Ok(StageParameters {
        stage,
        eta_bar,
        weight_bar_sq,
        eff_noise_sq: (target.noise_var + tail_power) / stage_power,
        eff_ridge: (ridge + tail_eig) / eta_bar,
        tail_power,
    })
}

/// Staged generalization error at `alpha = P / N(D, L)`.
pub fn staged_eg(params: &StageParameters, alpha: f64) -> Result<BandLimited> {
    let band = band_limited_eg(alpha, params.eff_ridge, params.eff_noise_sq)?;
    Ok(BandLimited {
        kappa: band.kappa,
        eg: params.stage_power() * band.eg + params.tail_power,
        diverged: band.diverged,
    })
}

/// Effective ridge of stage `L` for the untruncated power law
/// `eta_bar_K = K^-s`: `L^s (zeta(s, L) + lambda) - 1`.
pub fn power_law_effective_ridge(s: f64, stage: u32, ridge: f64) -> Result<f64> {
    if stage == 0 {
        return Err(Error::Domain("stages are numbered from 1".into()));
    }
    let l = stage as f64;
    Ok(l.powf(s) * (hurwitz_zeta(s, l)? + ridge) - 1.0)
}

/// Location of the highest interior maximum of the staged curve on
/// `alpha_grid`, or `None` when the curve is monotone there.
pub fn staged_curve_peak(params: &StageParameters, alpha_grid: &[f64]) -> Result<Option<f64>> {
    let values = alpha_grid
        .iter()
        .map(|&a| staged_eg(params, a).map(|b| b.eg))
        .collect::<Result<Vec<_>>>()?;
    if classify_values(&values) == PhaseClass::Monotone {
        return Ok(None);
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 1..values.len().saturating_sub(1) {
        let v = values[i];
        if v >= values[i - 1] && v >= values[i + 1] && best.is_none_or(|(_, b)| v > b) {
            best = Some((alpha_grid[i], v));
        }
    }
    Ok(best.map(|(a, _)| a))
}
