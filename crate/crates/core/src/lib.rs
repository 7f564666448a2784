//! Robust transmit waveform design for colocated MIMO radar detection.
//!
//! The target response is modelled as a circularly-symmetric complex Gaussian
//! vector. Waveforms are chosen to maximize the relative entropy between the
//! target-absent and target-present observation densities, using a
//! minorization-maximization ascent whose inner step is a norm-constrained
//! quadratic program solved through its secular equation.
//!
//! Modules, bottom up:
//! - [`numerics`]: complex dense linear algebra and Kronecker/vec helpers.
//! - [`model`]: array geometry, scenario, target prior and sampling.
//! - [`detection`]: relative entropy, Neyman-Pearson statistic, Monte Carlo.
//! - [`mm`]: nominal design, minorizers, subproblem solver, ascent loop.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod mm;
pub mod model;
pub mod numerics;

pub use detection::{relative_entropy, DetectorSpec, TargetSource};
pub use mm::{nominal_design, optimize, MmConfig, MmTrace};
pub use model::{build_prior, ArrayGeometry, Scenario, TargetPrior};
pub use numerics::{ComplexMatrix, ComplexVector, C64};
