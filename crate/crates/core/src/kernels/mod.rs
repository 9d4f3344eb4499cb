//! Kernel evaluation, Gram matrices and kernel spectra.

mod gram;
mod projection;
mod quadrature;

pub use gram::{
    cross_gram, gram_eigendecompose, gram_from_inner, gram_matrix, gram_top_eigensystem, EigenSystem,
};
pub use projection::{multiclass_curve, multiclass_eg, project_target, Projection};
pub use quadrature::{
    dot_product_eigenvalues, effective_regularization_table, gauss_jacobi, gegenbauer,
    gegenbauer_all,
};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation of the network whose infinite-width kernels are evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

fn default_weight_var() -> f64 {
    1.0
}

/// Declarative kernel specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelDescriptor {
    /// `exp(-|x - x'|^2 / (2 D width^2))` for inputs of dimension `D`.
    Rbf { width: f64 },
    /// `sum_j coefficients[j] (x . x')^j`.
    DotProductPoly { coefficients: Vec<f64> },
    /// Neural tangent kernel of a fully connected network with `depth`
    /// weight layers.
    Ntk {
        depth: u32,
        #[serde(default = "default_weight_var")]
        weight_var: f64,
        #[serde(default)]
        bias_var: f64,
        #[serde(default)]
        activation: Activation,
    },
    /// Gaussian-process kernel of the same network (last layer trained only).
    Nngp {
        depth: u32,
        #[serde(default = "default_weight_var")]
        weight_var: f64,
        #[serde(default)]
        bias_var: f64,
        #[serde(default)]
        activation: Activation,
    },
}

impl KernelDescriptor {
    pub fn rbf(width: f64) -> Self {
        KernelDescriptor::Rbf { width }
    }

    pub fn ntk(depth: u32, weight_var: f64, bias_var: f64) -> Self {
        KernelDescriptor::Ntk {
            depth,
            weight_var,
            bias_var,
            activation: Activation::Relu,
        }
    }

    pub fn nngp(depth: u32, weight_var: f64, bias_var: f64) -> Self {
        KernelDescriptor::Nngp {
            depth,
            weight_var,
            bias_var,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelDescriptor::Rbf { width } => {
                if !(*width > 0.0) || !width.is_finite() {
                    return Err(Error::Invalid(format!("rbf width {width} must be > 0")));
                }
            }
            KernelDescriptor::DotProductPoly { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::Invalid("polynomial kernel needs coefficients".into()));
                }
                if coefficients.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                    return Err(Error::Invalid(
                        "polynomial kernel coefficients must be finite and >= 0".into(),
                    ));
                }
            }
            KernelDescriptor::Ntk {
                depth,
                weight_var,
                bias_var,
                ..
            }
            | KernelDescriptor::Nngp {
                depth,
                weight_var,
                bias_var,
                ..
            } => {
                if *depth < 1 {
                    return Err(Error::Invalid("network depth must be >= 1".into()));
                }
                if !(*weight_var > 0.0) || !weight_var.is_finite() {
                    return Err(Error::Invalid(format!("weight variance {weight_var} must be > 0")));
                }
                if !(*bias_var >= 0.0) || !bias_var.is_finite() {
                    return Err(Error::Invalid(format!("bias variance {bias_var} must be >= 0")));
                }
            }
        }
        Ok(())
    }

    /// Kernel value from the inner product `x . x'` and the squared norms of
    /// both points, in dimension `dim`.
    pub fn from_inner(&self, inner: f64, norm_sq_a: f64, norm_sq_b: f64, dim: usize) -> f64 {
        match self {
            KernelDescriptor::Rbf { width } => {
                let dist_sq = (norm_sq_a + norm_sq_b - 2.0 * inner).max(0.0);
                (-dist_sq / (2.0 * dim as f64 * width * width)).exp()
            }
            KernelDescriptor::DotProductPoly { coefficients } => horner(coefficients, inner),
            KernelDescriptor::Ntk {
                depth,
                weight_var,
                bias_var,
                ..
            } => relu_kernels(*depth, inner, norm_sq_a, norm_sq_b, *weight_var, *bias_var).1,
            KernelDescriptor::Nngp {
                depth,
                weight_var,
                bias_var,
                ..
            } => relu_kernels(*depth, inner, norm_sq_a, norm_sq_b, *weight_var, *bias_var).0,
        }
    }

    /// The kernel restricted to the unit sphere in dimension `dim`, as a
    /// function of `t = x . x'`.
    pub fn dot_profile(&self, dim: usize) -> Result<impl Fn(f64) -> f64 + Sync + '_> {
        self.validate()?;
        if dim < 2 {
            return Err(Error::Domain(format!("dimension {dim} must be >= 2")));
        }
        Ok(move |t: f64| self.from_inner(t.clamp(-1.0, 1.0), 1.0, 1.0, dim))
    }
}

fn horner(coefficients: &[f64], t: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// Evaluates `kernel` on a pair of points.
pub fn kernel_eval(desc: &KernelDescriptor, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "points have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    desc.validate()?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    if let KernelDescriptor::Rbf { width } = desc {
        // direct difference is exact for a single pair
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        return Ok((-d2 / (2.0 * x.len() as f64 * width * width)).exp());
    }
    Ok(desc.from_inner(dot(x, y), dot(x, x), dot(y, y), x.len()))
}

/// Gaussian-process and tangent kernels `(Sigma, Theta)` of a rectifier
/// network with `depth` weight layers.
///
/// The first layer is linear: `Sigma = weight_var * x.x' + bias_var`. Each
/// further layer applies the arc-cosine map to the previous covariance.
pub fn relu_kernels(
    depth: u32,
    inner: f64,
    norm_sq_a: f64,
    norm_sq_b: f64,
    weight_var: f64,
    bias_var: f64,
) -> (f64, f64) {
    let mut qa = weight_var * norm_sq_a + bias_var;
    let mut qb = weight_var * norm_sq_b + bias_var;
    let mut sigma = weight_var * inner + bias_var;
    let mut theta_k = sigma;
    for _ in 1..depth {
        let scale = (qa * qb).sqrt();
        let rho = if scale > 0.0 { (sigma / scale).clamp(-1.0, 1.0) } else { 1.0 };
        let angle = rho.acos();
        let next = weight_var * scale / (2.0 * PI) * (angle.sin() + (PI - angle) * rho) + bias_var;
        let deriv = weight_var * (PI - angle) / (2.0 * PI);
        theta_k = theta_k * deriv + next;
        sigma = next;
        qa = 0.5 * weight_var * qa + bias_var;
        qb = 0.5 * weight_var * qb + bias_var;
    }
    (sigma, theta_k)
}

/// Depth-`depth` rectifier NTK on the unit sphere as a function of
/// `t = x . x'`, clamped to `[-1, 1]`.
pub fn ntk_dot_profile(depth: u32, t: f64, weight_var: f64, bias_var: f64) -> f64 {
    relu_kernels(depth, t.clamp(-1.0, 1.0), 1.0, 1.0, weight_var, bias_var).1
}

/// Depth-`depth` rectifier NNGP kernel on the unit sphere.
pub fn nngp_dot_profile(depth: u32, t: f64, weight_var: f64, bias_var: f64) -> f64 {
    relu_kernels(depth, t.clamp(-1.0, 1.0), 1.0, 1.0, weight_var, bias_var).0
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Diagonal of the recursion at t = 1: angle 0, so Sigma follows
    /// q -> w q / 2 + b and the derivative factor is w / 2.
    fn diagonal_oracle(depth: u32, w: f64, b: f64) -> f64 {
        let mut q = w + b;
        let mut theta = q;
        for _ in 1..depth {
            let next = w * q / 2.0 + b;
            theta = theta * (w / 2.0) + next;
            q = next;
        }
        theta
    }

    #[test]
    fn rbf_diagonal_is_one() {
        let k = KernelDescriptor::rbf(0.3);
        assert_eq!(kernel_eval(&k, &[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0]).unwrap(), 1.0);
    }

    #[test]
    fn linear_network_kernel() {
        for t in [-1.0, -0.3, 0.0, 0.6, 1.0] {
            assert!((ntk_dot_profile(1, t, 1.0, 0.0) - t).abs() < 1e-15);
        }
        let k = KernelDescriptor::ntk(1, 1.0, 0.0);
        let x = [0.6, 0.8];
        let y = [1.0, 0.0];
        assert!((kernel_eval(&k, &x, &y).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn depth_two_at_one() {
        // one hidden layer, w = 1, b = 0: Sigma = 1/2 and Theta = 1 * 1/2 + 1/2
        assert!((ntk_dot_profile(2, 1.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
        for depth in 1..6 {
            for (w, b) in [(1.0, 0.0), (2.0, 0.1), (1.5, 0.5)] {
                let got = ntk_dot_profile(depth, 1.0, w, b);
                assert!((got - diagonal_oracle(depth, w, b)).abs() < 1e-13 * got);
            }
        }
    }

    #[test]
    fn depth_two_closed_form() {
        // Theta(t) = t (pi - acos t) / (2 pi) + (sqrt(1 - t^2) + (pi - acos t) t) / (2 pi)
        for t in [-0.9, -0.2, 0.0, 0.4, 0.95] {
            let a = f64::acos(t);
            let want = (t * (PI - a) + (1.0 - t * t).sqrt() + (PI - a) * t) / (2.0 * PI);
            assert!((ntk_dot_profile(2, t, 1.0, 0.0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn ntk_profile_is_nondecreasing_on_positive_inner_products() {
        for depth in 1..5 {
            let mut last = f64::NEG_INFINITY;
            // the rectifier NTK dips near t = -1, so only [0, 1] is monotone
            for i in 0..=2000 {
                let t = i as f64 / 2000.0;
                let v = ntk_dot_profile(depth, t, 1.0, 0.0);
                assert!(v >= last - 1e-15, "depth {depth} t {t}");
                last = v;
            }
        }
    }

    #[test]
    fn clamps_out_of_range_inner_products() {
        assert_eq!(ntk_dot_profile(3, 1.0 + 1e-13, 1.0, 0.0), ntk_dot_profile(3, 1.0, 1.0, 0.0));
    }

    #[test]
    fn descriptor_validation_and_serde() {
        assert!(KernelDescriptor::rbf(0.0).validate().is_err());
        assert!(KernelDescriptor::ntk(0, 1.0, 0.0).validate().is_err());
        assert!(KernelDescriptor::ntk(2, 1.0, -0.1).validate().is_err());
        let k: KernelDescriptor = serde_json::from_str(r#"{"family":"ntk","depth":3}"#).unwrap();
        assert_eq!(k, KernelDescriptor::ntk(3, 1.0, 0.0));
        let bad = serde_json::from_str::<KernelDescriptor>(
            r#"{"family":"ntk","depth":3,"activation":"tanh"}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let k = KernelDescriptor::rbf(1.0);
        assert!(matches!(kernel_eval(&k, &[1.0], &[1.0, 2.0]), Err(Error::Invalid(_))));
    }

    #[test]
    fn general_norms_are_homogeneous_without_bias() {
        // bias-free rectifier kernels are positively homogeneous of degree 1
        // in each argument
        let k = KernelDescriptor::ntk(3, 1.0, 0.0);
        let x = [0.3, -0.4, 0.5];
        let y = [0.1, 0.7, -0.2];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = kernel_eval(&k, &x, &y).unwrap();
        let b = kernel_eval(&k, &x2, &y).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
    }
}
