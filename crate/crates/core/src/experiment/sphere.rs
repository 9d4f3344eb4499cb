//! Uniform points on the sphere and zonal target functions.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{dot_product_eigenvalues, gegenbauer, KernelDescriptor};
use crate::spectral::{degeneracy, Spectrum, TargetDecomposition};

/// `count` points drawn uniformly from `S^{dim-1}`, one per row.
pub fn sample_sphere(dim: usize, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_sphere_with(dim, count, &mut rng)
}

pub(crate) fn sample_sphere_with(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if dim < 2 {
        return Err(Error::Domain(format!("sphere dimension {dim} must be >= 2")));
    }
    let mut x = DMatrix::<f64>::zeros(count, dim);
    for i in 0..count {
        loop {
            let mut n2 = 0.0;
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                x[(i, j)] = z;
                n2 += z * z;
            }
            if n2 > 1e-200 {
                let n = n2.sqrt();
                for j in 0..dim {
                    x[(i, j)] /= n;
                }
                break;
            }
        }
    }
    Ok(x)
}

/// One term `amplitude * P_degree(direction . x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonalTerm {
    pub degree: u32,
    pub direction: Vec<f64>,
    pub amplitude: f64,
}

/// A target function on the sphere written as a sum of zonal harmonics.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonalTarget {
    pub dim: u32,
    pub terms: Vec<ZonalTerm>,
}

impl ZonalTarget {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let dot: f64 = t.direction.iter().zip(x).map(|(a, b)| a * b).sum();
                t.amplitude * gegenbauer(self.dim, t.degree, dot.clamp(-1.0, 1.0))
            })
            .sum()
    }

    /// Values at every row of `points`.
    pub fn eval_rows(&self, points: &DMatrix<f64>) -> Vec<f64> {
        (0..points.nrows())
            .map(|i| {
                let row: Vec<f64> = points.row(i).iter().copied().collect();
                self.eval(&row)
            })
            .collect()
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.degree).max().unwrap_or(0)
    }

    /// Exact mean-square power of each degree component under the uniform
    /// measure, `sum_ij a_i a_j P_k(b_i . b_j) / N(D, k)`.
    pub fn degree_powers(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.max_degree() as usize + 1];
        for (i, a) in self.terms.iter().enumerate() {
            for b in &self.terms[i..] {
                if a.degree != b.degree {
                    continue;
                }
                let dot: f64 = a.direction.iter().zip(&b.direction).map(|(p, q)| p * q).sum();
                let mult = if std::ptr::eq(a, b) { 1.0 } else { 2.0 };
                out[a.degree as usize] +=
                    mult * a.amplitude * b.amplitude * gegenbauer(self.dim, a.degree, dot.clamp(-1.0, 1.0));
            }
        }
        for (k, p) in out.iter_mut().enumerate() {
            *p /= degeneracy(self.dim, k as u32)? as f64;
        }
        Ok(out)
    }
}

fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    Ok(sample_sphere_with(dim, 1, rng)?.row(0).iter().copied().collect())
}

/// `scale * P_degree(beta . x)` with `beta` a seeded random unit vector.
pub fn gegenbauer_target(dim: u32, degree: u32, seed: u64, scale: f64) -> Result<ZonalTarget> {
    if dim < 3 {
        return Err(Error::Domain(format!("gegenbauer target needs dimension >= 3, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ZonalTarget {
        dim,
        terms: vec![ZonalTerm {
            degree,
            direction: random_direction(dim as usize, &mut rng)?,
            amplitude: scale,
        }],
    })
}

/// Random target whose degree-`k` part has expected power `N(D, k) eta_k^2`,
/// matching teacher weights with `<w^2> = eta` on every harmonic.
///
/// Each degree is a sum of `directions` zonal functions with independent
/// Gaussian amplitudes of variance `N(D, k)^2 eta_k^2 / directions`.
pub fn synthetic_sphere_target(dim: u32, eta: &[f64], directions: usize, seed: u64) -> Result<ZonalTarget> {
    if dim < 3 {
        return Err(Error::Domain(format!("sphere target needs dimension >= 3, got {dim}")));
    }
    if directions == 0 {
        return Err(Error::Invalid("need at least one direction per degree".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for (k, &e) in eta.iter().enumerate() {
        let n = degeneracy(dim, k as u32)? as f64;
        let sd = n * e / (directions as f64).sqrt();
        for _ in 0..directions {
            let z: f64 = StandardNormal.sample(&mut rng);
            let direction = random_direction(dim as usize, &mut rng)?;
            if e > 0.0 {
                terms.push(ZonalTerm {
                    degree: k as u32,
                    direction,
                    amplitude: sd * z,
                });
            }
        }
    }
    Ok(ZonalTarget { dim, terms })
}

/// Theory inputs for a dot-product kernel on `S^{dim-1}`.
///
/// Degrees `0..=k_max` get their own blocks. The trace left beyond `k_max`
/// is spread evenly over the `N(dim, k_max + 1)` harmonics of the next
/// degree, which is how it enters the theory while `P` is far below that
/// count.
#[derive(Debug, Clone)]
pub struct SphereSpectrum {
    pub spectrum: Spectrum,
    /// Per-degree eigenvalues `eta_0..=eta_{k_max}`.
    pub degree_eigenvalues: Vec<f64>,
    /// Degree of each block of `spectrum`; `k_max + 1` marks the tail block.
    pub block_degree: Vec<u32>,
}

impl SphereSpectrum {
    pub fn new(kernel: &KernelDescriptor, dim: u32, k_max: u32) -> Result<Self> {
        let profile = kernel.dot_profile(dim as usize)?;
        let mut eta = dot_product_eigenvalues(&profile, dim, k_max)?;
        // quadrature roundoff on degrees the kernel does not contain
        for e in eta.iter_mut() {
            if *e <= 1e-13 * profile(1.0).abs() {
                *e = 0.0;
            }
        }
        let mut blocks = Vec::with_capacity(eta.len() + 1);
        let mut head = 0.0;
        for (k, e) in eta.iter().enumerate() {
            let n = degeneracy(dim, k as u32)?;
            head += n as f64 * e;
            blocks.push((*e, n));
        }
        let remainder = profile(1.0) - head;
        if remainder > 1e-12 * profile(1.0) {
            let n = degeneracy(dim, k_max + 1)?;
            blocks.push((remainder / n as f64, n));
        }
        let (spectrum, order) = Spectrum::from_unsorted_blocks(&blocks)?;
        Ok(Self {
            spectrum,
            degree_eigenvalues: eta,
            block_degree: order.iter().map(|&i| i as u32).collect(),
        })
    }

    /// Decomposition of a zonal target; power on degrees with zero
    /// eigenvalue (or beyond `k_max`) is unlearnable.
    pub fn target(&self, f: &ZonalTarget, noise_var: f64) -> Result<TargetDecomposition> {
        let powers = f.degree_powers()?;
        let mut weights = vec![0.0; self.spectrum.len()];
        let mut unlearnable = 0.0;
        for (k, p) in powers.iter().enumerate() {
            let block = self.block_degree.iter().position(|&d| d as usize == k);
            let eta = self.degree_eigenvalues.get(k).copied().unwrap_or(0.0);
            match block {
                Some(b) if eta > 0.0 => weights[b] = p / eta,
                _ => unlearnable += p,
            }
        }
        TargetDecomposition::new(weights, noise_var, unlearnable)
    }
}
