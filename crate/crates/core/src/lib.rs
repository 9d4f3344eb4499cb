//! Learning curves of kernel ridge regression from kernel spectra.
//!
//! The crate is organized bottom-up:
//!
//! - [`spectral`]: eigenvalue spectra with degeneracies, teacher
//!   decompositions and the scalar summaries derived from them.
//! - [`theory`]: the self-consistent generalization-error theory, its
//!   band-limited closed form, phase diagram and learning stages.
//! - [`kernels`]: kernel evaluation, Gram matrices, empirical Mercer
//!   decompositions and dot-product kernel spectra by quadrature.
//! - [`experiment`]: seeded Monte Carlo kernel regression used to check the
//!   theory.
//! - [`data`], [`document`], [`output`]: file formats.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod document;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod output;
pub mod special;
pub mod spectral;
pub mod theory;

pub use error::{Error, Result};
pub use spectral::{Spectrum, StageParameters, TargetDecomposition};
