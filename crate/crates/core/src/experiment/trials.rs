use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::krr::krr_solve;
use super::sphere::{gegenbauer_target, sample_sphere_with, synthetic_sphere_target, SphereSpectrum, ZonalTarget};
use super::{DataSource, ExperimentPlan, TargetSource};
use crate::data::read_dataset;
use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram_eigendecompose, gram_matrix, project_target, KernelDescriptor};
use crate::spectral::{Spectrum, TargetDecomposition};
use crate::theory::generalization_error;

/// Largest tolerated fraction of failed trials at any sample size.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Directions per degree in synthetic sphere targets.
const SYNTHETIC_DIRECTIONS: usize = 8;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `t` at sample size `p`, a pure function of its arguments.
pub fn trial_seed(base_seed: u64, p: usize, t: usize) -> u64 {
    splitmix(splitmix(splitmix(base_seed) ^ p as u64) ^ t as u64)
}

fn held_out_seed(base_seed: u64) -> u64 {
    splitmix(base_seed ^ 0x5eed_7e57_0000_0001)
}

/// Spectrum and per-channel targets used for theory curves.
#[derive(Debug, Clone)]
pub struct TheoryInput {
    pub spectrum: Spectrum,
    pub channels: Vec<TargetDecomposition>,
}

impl TheoryInput {
    /// Theory error at `p` summed over channels; `+inf` at a divergence.
    pub fn eg(&self, ridge: f64, p: f64) -> Result<f64> {
        self.channels.iter().try_fold(0.0, |acc, t| {
            Ok(acc + generalization_error(&self.spectrum, t, ridge, p)?.eg)
        })
    }
}

/// Aggregated Monte Carlo results at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub p: usize,
    pub trials: usize,
    pub failures: usize,
    pub eg_mean: f64,
    pub eg_std: f64,
    /// Bias with the finite-trial inflation `V / trials` removed, so that
    /// `bias + variance = eg_mean` exactly.
    pub bias: f64,
    /// Per-point variance across trials (unbiased), averaged over the test
    /// measure.
    pub variance: f64,
    pub eg_theory: Option<f64>,
    /// `(theory - mean) / (std / sqrt(trials))`.
    pub z_score: Option<f64>,
}

impl PointReport {
    /// Standard error of `eg_mean`.
    pub fn standard_error(&self) -> f64 {
        self.eg_std / (self.trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub base_seed: u64,
    pub points: Vec<PointReport>,
    pub wall_time_secs: f64,
}

impl TrialReport {
    /// Fraction of points with a finite z-score of magnitude at most `limit`.
    pub fn z_pass_fraction(&self, limit: f64) -> f64 {
        let ok = self
            .points
            .iter()
            .filter(|p| p.z_score.is_some_and(|z| z.abs() <= limit))
            .count();
        ok as f64 / self.points.len() as f64
    }
}

enum Source {
    Gaussian {
        sqrt_eta: Vec<f64>,
        weights: Vec<f64>,
    },
    Sphere {
        kernel: KernelDescriptor,
        dim: usize,
        test: DMatrix<f64>,
        f: ZonalTarget,
    },
    Dataset {
        gram: DMatrix<f64>,
        labels: DMatrix<f64>,
    },
}

/// Everything a trial needs, built once per plan.
struct Prepared {
    source: Source,
    /// Noise-free target on the evaluation measure, `rows x channels`.
    target: DMatrix<f64>,
    /// Measure weight of each evaluation row.
    metric: Vec<f64>,
    theory: Option<TheoryInput>,
}

fn feature_eigenvalues(features: usize, eigenvalues: &Option<Vec<f64>>) -> Vec<f64> {
    eigenvalues
        .clone()
        .unwrap_or_else(|| vec![1.0 / features as f64; features])
}

fn prepare(plan: &ExperimentPlan, want_theory: bool) -> Result<Prepared> {
    plan.validate()?;
    let p_max = *plan.p_grid.last().unwrap();
    match &plan.data_source {
        DataSource::GaussianFeatures { features, eigenvalues } => {
            let eta = feature_eigenvalues(*features, eigenvalues);
            let weights: Vec<f64> = match plan.target_source {
                TargetSource::Synthetic { seed, .. } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    eta.iter()
                        .map(|e| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            e.sqrt() * z
                        })
                        .collect()
                }
                TargetSource::Isotropic { seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let z: Vec<f64> = (0..*features).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let power: f64 = z.iter().zip(&eta).map(|(z, e)| e * z * z).sum();
                    z.iter().map(|v| v / power.sqrt()).collect()
                }
                _ => unreachable!("rejected by validation"),
            };
            let theory = if want_theory {
                let blocks: Vec<(f64, u64)> = eta.iter().map(|e| (*e, 1)).collect();
                let (spectrum, order) = Spectrum::from_unsorted_blocks(&blocks)?;
                let w2 = order.iter().map(|&i| weights[i] * weights[i]).collect();
                Some(TheoryInput {
                    spectrum,
                    channels: vec![TargetDecomposition::new(w2, plan.noise_var, 0.0)?],
                })
            } else {
                None
            };
            Ok(Prepared {
                target: DMatrix::from_column_slice(*features, 1, &weights),
                metric: eta.clone(),
                source: Source::Gaussian {
                    sqrt_eta: eta.iter().map(|e| e.sqrt()).collect(),
                    weights,
                },
                theory,
            })
        }
        DataSource::SphereUniform { dim } => {
            let kernel = plan.kernel.clone().unwrap();
            let spec = SphereSpectrum::new(&kernel, *dim, plan.theory_degrees)?;
            let f = match plan.target_source {
                TargetSource::Synthetic { seed, max_degree } => {
                    let eta = &spec.degree_eigenvalues[..=max_degree as usize];
                    synthetic_sphere_target(*dim, eta, SYNTHETIC_DIRECTIONS, seed)?
                }
                TargetSource::GegenbauerMode { degree, seed, scale } => {
                    gegenbauer_target(*dim, degree, seed, scale)?
                }
                _ => unreachable!("rejected by validation"),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(held_out_seed(plan.base_seed));
            let test = sample_sphere_with(*dim as usize, plan.test_size, &mut rng)?;
            let values = f.eval_rows(&test);
            let theory = if want_theory {
                Some(TheoryInput {
                    channels: vec![spec.target(&f, plan.noise_var)?],
                    spectrum: spec.spectrum,
                })
            } else {
                None
            };
            Ok(Prepared {
                target: DMatrix::from_column_slice(values.len(), 1, &values),
                metric: vec![1.0 / plan.test_size as f64; plan.test_size],
                source: Source::Sphere {
                    kernel,
                    dim: *dim as usize,
                    test,
                    f,
                },
                theory,
            })
        }
        DataSource::Dataset {
            path,
            labels_col,
            one_hot,
            normalize,
        } => {
            let mut data = read_dataset(path, *labels_col)?;
            data.normalize(*normalize)?;
            let m = data.len();
            if p_max > m {
                return Err(Error::Invalid(format!("P grid reaches {p_max} but the dataset has {m} points")));
            }
            let labels = if *one_hot {
                data.one_hot()?.0
            } else {
                let y = data
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("dataset has no label column".into()))?;
                DMatrix::from_column_slice(m, 1, y)
            };
            let gram = gram_matrix(plan.kernel.as_ref().unwrap(), &data.points)?;
            let theory = if want_theory {
                let eig = gram_eigendecompose(&gram)?;
                let mut spectrum = None;
                let mut channels = Vec::new();
                for c in 0..labels.ncols() {
                    let col: Vec<f64> = labels.column(c).iter().copied().collect();
                    let proj = project_target(&eig, &col)?;
                    log::info!("channel {c}: Parseval residual {:e}", proj.parseval_residual());
                    if spectrum.is_none() {
                        spectrum = Some(proj.spectrum()?);
                    }
                    channels.push(proj.target(plan.noise_var)?);
                }
                Some(TheoryInput {
                    spectrum: spectrum.unwrap(),
                    channels,
                })
            } else {
                None
            };
            Ok(Prepared {
                target: labels.clone(),
                metric: vec![1.0 / m as f64; m],
                source: Source::Dataset { gram, labels },
                theory,
            })
        }
    }
}

fn add_noise(y: &mut DMatrix<f64>, noise_var: f64, rng: &mut ChaCha8Rng) {
    if noise_var > 0.0 {
        let sd = noise_var.sqrt();
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
    }
}

/// One trial: predictions on the evaluation measure, `rows x channels`.
fn run_one(prep: &Prepared, plan: &ExperimentPlan, p: usize, t: usize) -> Result<DMatrix<f64>> {
    let seed = trial_seed(plan.base_seed, p, t);
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    match &prep.source {
        Source::Gaussian { sqrt_eta, weights } => {
            let n = sqrt_eta.len();
            let x = DMatrix::from_fn(p, n, |_, j| {
                let z: f64 = StandardNormal.sample(&mut data_rng);
                sqrt_eta[j] * z
            });
            let w = DMatrix::from_column_slice(n, 1, weights);
            let mut y = &x * w;
            add_noise(&mut y, plan.noise_var, &mut noise_rng);
            let k = &x * x.transpose();
            let alpha = krr_solve(&k, &y, plan.ridge)?;
            Ok(x.tr_mul(&alpha))
        }
        Source::Sphere { kernel, dim, test, f } => {
            let train = sample_sphere_with(*dim, p, &mut data_rng)?;
            let values = f.eval_rows(&train);
            let mut y = DMatrix::from_column_slice(p, 1, &values);
            add_noise(&mut y, plan.noise_var, &mut noise_rng);
            let alpha = krr_solve(&gram_matrix(kernel, &train)?, &y, plan.ridge)?;
            Ok(cross_gram(kernel, test, &train)? * alpha)
        }
        Source::Dataset { gram, labels } => {
            let m = gram.nrows();
            let idx = sample(&mut data_rng, m, p).into_vec();
            let k = gram.select_rows(&idx).select_columns(&idx);
            let mut y = labels.select_rows(&idx);
            add_noise(&mut y, plan.noise_var, &mut noise_rng);
            let alpha = krr_solve(&k, &y, plan.ridge)?;
            Ok(gram.select_columns(&idx) * alpha)
        }
    }
}

fn weighted_sq(prep: &Prepared, diff: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for c in 0..prep.target.ncols() {
        for (i, m) in prep.metric.iter().enumerate() {
            let d = diff(i, c);
            total += m * d * d;
        }
    }
    total
}

fn aggregate(prep: &Prepared, p: usize, outcomes: Vec<Result<DMatrix<f64>>>) -> Result<PointReport> {
    let requested = outcomes.len();
    let mut preds = Vec::with_capacity(requested);
    let mut failures = 0;
    for o in outcomes {
        match o {
            Ok(pred) => preds.push(pred),
            Err(e) if e.is_numerical() => {
                log::warn!("trial at P={p} failed: {e}");
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if failures as f64 > MAX_FAILURE_FRACTION * requested as f64 || preds.is_empty() {
        return Err(Error::Numerical(format!(
            "{failures} of {requested} trials failed at P={p}"
        )));
    }
    let n = preds.len() as f64;
    let errors: Vec<f64> = preds
        .iter()
        .map(|pred| weighted_sq(prep, |i, c| pred[(i, c)] - prep.target[(i, c)]))
        .collect();
    let mean = errors.iter().sum::<f64>() / n;
    let std = if preds.len() > 1 {
        (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut avg = DMatrix::<f64>::zeros(prep.target.nrows(), prep.target.ncols());
    for pred in &preds {
        avg += pred;
    }
    avg /= n;
    let variance = if preds.len() > 1 {
        preds
            .iter()
            .map(|pred| weighted_sq(prep, |i, c| pred[(i, c)] - avg[(i, c)]))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let raw_bias = weighted_sq(prep, |i, c| avg[(i, c)] - prep.target[(i, c)]);
    Ok(PointReport {
        p,
        trials: preds.len(),
        failures,
        eg_mean: mean,
        eg_std: std,
        bias: raw_bias - variance / n,
        variance,
        eg_theory: None,
        z_score: None,
    })
}

fn execute(plan: &ExperimentPlan, prep: &Prepared) -> Result<TrialReport> {
    let start = Instant::now();
    let mut points = Vec::with_capacity(plan.p_grid.len());
    for &p in &plan.p_grid {
        let outcomes: Vec<Result<DMatrix<f64>>> = (0..plan.trials)
            .into_par_iter()
            .map(|t| run_one(prep, plan, p, t))
            .collect();
        points.push(aggregate(prep, p, outcomes)?);
    }
    Ok(TrialReport {
        base_seed: plan.base_seed,
        points,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs every trial of `plan` and aggregates per sample size.
///
/// Each trial draws its training set and label noise from its own seed
/// (see [`trial_seed`]); data and noise use separate streams, so plans that
/// differ only in noise level see the same training inputs.
pub fn run_trials(plan: &ExperimentPlan) -> Result<TrialReport> {
    let prep = prepare(plan, false)?;
    execute(plan, &prep)
}

/// Per-sample-size empirical `(bias, variance)`.
pub fn empirical_bias_variance(plan: &ExperimentPlan) -> Result<Vec<(f64, f64)>> {
    if plan.trials < 2 {
        return Err(Error::Invalid("bias and variance need at least two trials".into()));
    }
    Ok(run_trials(plan)?
        .points
        .iter()
        .map(|p| (p.bias, p.variance))
        .collect())
}

fn z_score(theory: f64, point: &PointReport) -> f64 {
    let diff = theory - point.eg_mean;
    let se = point.standard_error();
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * theory.abs().max(point.eg_mean.abs()) + 1e-15 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Runs `plan` and aligns it with the theory curve.
///
/// The theory comes from `theory` when given; otherwise it is derived from
/// the plan: the feature spectrum for Gaussian features, kernel quadrature
/// for the sphere, and the Gram eigendecomposition for datasets.
pub fn theory_experiment_report(plan: &ExperimentPlan, theory: Option<&TheoryInput>) -> Result<TrialReport> {
    let prep = prepare(plan, theory.is_none())?;
    let theory = theory.or(prep.theory.as_ref()).unwrap();
    let mut report = execute(plan, &prep)?;
    for point in &mut report.points {
        let eg = theory.eg(plan.ridge, point.p as f64)?;
        point.eg_theory = Some(eg);
        point.z_score = Some(z_score(eg, point));
    }
    Ok(report)
}
