use nalgebra::{DMatrix, DVector};

use super::EigenSystem;
use crate::error::{Error, Result};
use crate::spectral::{Spectrum, TargetDecomposition};
use crate::theory::generalization_error;

/// Modes with eigenvalue below this fraction of the largest are not
/// inverted; their label power is routed to the unlearnable tail.
pub const INVERSION_THRESHOLD: f64 = 1e-12;

/// Teacher weights of one label channel in an empirical eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Eigenvalues of the retained modes, descending.
    pub eigenvalues: Vec<f64>,
    /// Teacher weight `w_k` of each retained mode.
    pub weights: Vec<f64>,
    /// Label power carried by discarded modes.
    pub unlearnable_power: f64,
    /// `|y|^2 / M`.
    pub second_moment: f64,
}

impl Projection {
    /// `sum eta_k w_k^2`.
    pub fn learnable_power(&self) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| e * w * w)
            .sum()
    }

    /// `|learnable + unlearnable - |y|^2 / M|`.
    pub fn parseval_residual(&self) -> f64 {
        (self.learnable_power() + self.unlearnable_power - self.second_moment).abs()
    }

    /// Spectrum of the retained modes.
    pub fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::from_modes(&self.eigenvalues)
    }

    /// Target decomposition paired with [`Projection::spectrum`].
    pub fn target(&self, noise_var: f64) -> Result<TargetDecomposition> {
        let spectrum = self.spectrum()?;
        let sq: Vec<f64> = self.weights.iter().map(|w| w * w).collect();
        let mut t = TargetDecomposition::from_mode_weights(&spectrum, &sq, noise_var)?;
        t.unlearnable_power = self.unlearnable_power;
        t.validate()?;
        Ok(t)
    }
}

/// Teacher weights `w = (1/M) Lambda^{-1/2} Phi^T y` of labels `y` sampled at
/// the points of `eigsys`.
///
/// Requires a complete eigensystem so the discarded power can be computed
/// mode by mode.
pub fn project_target(eigsys: &EigenSystem, labels: &[f64]) -> Result<Projection> {
    let m = eigsys.sample_count;
    if labels.len() != m {
        return Err(Error::Invalid(format!(
            "{} labels for {m} sample points",
            labels.len()
        )));
    }
    if !eigsys.is_complete() {
        return Err(Error::Invalid("target projection needs a complete eigensystem".into()));
    }
    let eta_max = eigsys.eigenvalues.first().copied().unwrap_or(0.0);
    let cutoff = INVERSION_THRESHOLD * eta_max;
    let mf = m as f64;
    let y = DVector::from_column_slice(labels);
    let coeffs = eigsys.phi.tr_mul(&y) / mf;
    let mut eigenvalues = Vec::new();
    let mut weights = Vec::new();
    let mut unlearnable = 0.0;
    for (k, &eta) in eigsys.eigenvalues.iter().enumerate() {
        let c = coeffs[k];
        if eta > cutoff && eta > 0.0 {
            eigenvalues.push(eta);
            weights.push(c / eta.sqrt());
        } else {
            // eta w^2 = c^2 for every mode
            unlearnable += c * c;
        }
    }
    if eigenvalues.is_empty() {
        return Err(Error::Degenerate("every eigenvalue is below the inversion threshold".into()));
    }
    Ok(Projection {
        eigenvalues,
        weights,
        unlearnable_power: unlearnable,
        second_moment: y.norm_squared() / mf,
    })
}

/// Summed theory curve over several label channels sharing one spectrum.
pub fn multiclass_curve(
    spectrum: &Spectrum,
    channels: &[TargetDecomposition],
    ridge: f64,
    p_grid: &[f64],
) -> Result<Vec<f64>> {
    p_grid
        .iter()
        .map(|&p| {
            channels.iter().try_fold(0.0, |acc, t| {
                Ok(acc + generalization_error(spectrum, t, ridge, p)?.eg)
            })
        })
        .collect()
}

/// Theory curve for multi-channel labels (one column per channel), summed
/// over channels.
pub fn multiclass_eg(
    eigsys: &EigenSystem,
    labels: &DMatrix<f64>,
    ridge: f64,
    p_grid: &[f64],
) -> Result<Vec<f64>> {
    let mut spectrum = None;
    let mut channels = Vec::with_capacity(labels.ncols());
    for c in 0..labels.ncols() {
        let column: Vec<f64> = labels.column(c).iter().copied().collect();
        let proj = project_target(eigsys, &column)?;
        if spectrum.is_none() {
            spectrum = Some(proj.spectrum()?);
        }
        channels.push(proj.target(0.0)?);
    }
    let spectrum = spectrum.ok_or_else(|| Error::Invalid("no label channels".into()))?;
    multiclass_curve(&spectrum, &channels, ridge, p_grid)
}
