//! Empirical-Bayes estimation of random sinusoid frequencies.
//!
//! The pipeline treats each unknown frequency as uniformly distributed on
//! `[θ_ℓ − W, θ_ℓ + W]` and estimates the prior's hyperparameters from a
//! panel of independent snapshots:
//!
//! 1. [`covest`] averages per-snapshot Toeplitz ACF estimates, reads the noise
//!    floor off the smallest eigenvalue and the bandwidth off the spectral knee.
//! 2. [`subspace`] truncates the eigenvectors at the estimated rank, solves an
//!    orthogonal Procrustes problem for the shift operator and clusters its
//!    eigen-phases into center-frequency estimates.
//! 3. [`map`] refines the frequencies by box-constrained linearized least
//!    squares inside the estimated prior support.
//!
//! [`kernel`] holds the modulated-sinc covariance and concentration-matrix
//! analysis, [`signal`] the synthetic panel generator and [`harness`] the
//! Monte-Carlo campaign runner.

pub mod covest;
pub mod diag;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod map;
pub mod signal;
pub mod stats;
pub mod subspace;

#[cfg(test)]
pub(crate) mod testutil;

pub use diag::Flag;
pub use error::{Error, Result};
pub use kernel::{FrequencyBand, PriorHyperParams};
pub use linalg::{EigenSystem, ToeplitzCovariance};
pub use signal::{PanelConfig, SnapshotPanel};
