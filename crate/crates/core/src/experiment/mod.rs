//! Monte Carlo kernel ridge regression experiments.

mod krr;
mod sphere;
mod trials;

pub use krr::{krr_fit_predict, krr_solve, PINV_CUTOFF};
pub use sphere::{
    gegenbauer_target, sample_sphere, synthetic_sphere_target, SphereSpectrum, ZonalTarget, ZonalTerm,
};
pub use trials::{
    empirical_bias_variance, run_trials, theory_experiment_report, trial_seed, PointReport, TheoryInput,
    TrialReport,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LabelColumn, Normalization};
use crate::error::{Error, Result};
use crate::kernels::KernelDescriptor;

/// Where training and test points come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Uniform on `S^{dim-1}`; errors measured on a held-out set.
    SphereUniform { dim: u32 },
    /// Features `x_k = sqrt(eta_k) z_k` with standard Gaussian `z`, under the
    /// linear kernel `x . x'`. Errors are exact population averages.
    /// Without `eigenvalues` the spectrum is flat, `eta_k = 1/features`.
    GaussianFeatures {
        features: usize,
        #[serde(default)]
        eigenvalues: Option<Vec<f64>>,
    },
    /// A finite dataset; training sets are drawn without replacement and
    /// errors are measured over every point.
    Dataset {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        labels_col: LabelColumn,
        #[serde(default = "default_true")]
        one_hot: bool,
        #[serde(default)]
        normalize: Normalization,
    },
}

fn default_label_column() -> LabelColumn {
    LabelColumn::Last
}

fn default_true() -> bool {
    true
}

/// The noise-free target function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSource {
    /// Dataset labels (one-hot channels or the raw label column).
    ProjectedLabels,
    /// Random teacher with `<w_rho^2> = eta_rho`. On the sphere, degrees
    /// above `max_degree` carry no power.
    Synthetic {
        seed: u64,
        #[serde(default = "default_max_degree")]
        max_degree: u32,
    },
    /// Gaussian features only: uniformly random teacher direction with unit
    /// total power.
    Isotropic { seed: u64 },
    /// Sphere only: `scale * P_degree(beta . x)`.
    GegenbauerMode {
        degree: u32,
        seed: u64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_max_degree() -> u32 {
    4
}

fn default_scale() -> f64 {
    1.0
}

fn default_test_size() -> usize {
    10_000
}

fn default_theory_degrees() -> u32 {
    10
}

/// A complete, seeded experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Kernel used by the regression; Gaussian-feature sources always use
    /// the linear kernel and must leave this out.
    #[serde(default)]
    pub kernel: Option<KernelDescriptor>,
    pub data_source: DataSource,
    pub target_source: TargetSource,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub noise_var: f64,
    pub p_grid: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Held-out points for sphere sources.
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Degrees resolved by the sphere theory spectrum.
    #[serde(default = "default_theory_degrees")]
    pub theory_degrees: u32,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    /// Reads a plan; relative dataset paths are taken relative to the plan.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = Self::from_json(&text).map_err(|e| Error::parse(path, e))?;
        if let DataSource::Dataset { path: data, .. } = &mut plan.data_source {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Invalid("plan requests zero trials".into()));
        }
        if self.p_grid.is_empty() {
            return Err(Error::Invalid("plan has an empty P grid".into()));
        }
        if self.p_grid[0] == 0 || self.p_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("P grid must be positive and strictly increasing".into()));
        }
        if !(self.ridge >= 0.0) || !(self.noise_var >= 0.0) {
            return Err(Error::Invalid("ridge and noise variance must be >= 0".into()));
        }
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        match (&self.data_source, &self.target_source) {
            (DataSource::GaussianFeatures { features, eigenvalues }, t) => {
                if self.kernel.is_some() {
                    return Err(Error::Invalid("gaussian features use the linear kernel; omit `kernel`".into()));
                }
                if *features == 0 {
                    return Err(Error::Invalid("gaussian features need at least one feature".into()));
                }
                if let Some(e) = eigenvalues {
                    if e.len() != *features || e.iter().any(|v| !(*v >= 0.0)) || !e.iter().any(|v| *v > 0.0) {
                        return Err(Error::Invalid(
                            "feature eigenvalues must be `features` nonnegative values, not all zero".into(),
                        ));
                    }
                }
                if !matches!(t, TargetSource::Synthetic { .. } | TargetSource::Isotropic { .. }) {
                    return Err(Error::Invalid("gaussian features need a synthetic or isotropic target".into()));
                }
            }
            (DataSource::SphereUniform { dim }, t) => {
                if *dim < 3 {
                    return Err(Error::Invalid("sphere experiments need dimension >= 3".into()));
                }
                if self.kernel.is_none() {
                    return Err(Error::Invalid("sphere experiments need a kernel".into()));
                }
                if self.test_size == 0 {
                    return Err(Error::Invalid("sphere experiments need a test set".into()));
                }
                if !matches!(t, TargetSource::Synthetic { .. } | TargetSource::GegenbauerMode { .. }) {
                    return Err(Error::Invalid("sphere experiments need a synthetic or gegenbauer target".into()));
                }
                if let TargetSource::Synthetic { max_degree, .. } = t {
                    if *max_degree > self.theory_degrees {
                        return Err(Error::Invalid("target max_degree exceeds theory_degrees".into()));
                    }
                }
            }
            (DataSource::Dataset { .. }, t) => {
                if self.kernel.is_none() {
                    return Err(Error::Invalid("dataset experiments need a kernel".into()));
                }
                if *t != TargetSource::ProjectedLabels {
                    return Err(Error::Invalid("dataset experiments use projected labels".into()));
                }
            }
        }
        Ok(())
    }
}
