//! Fiber orientation distribution (FOD) estimation toolkit.
//!
//! The crate covers the full pipeline from synthetic diffusion MRI data to
//! quantitative FOD comparisons:
//!
//! - [`sphere_sh`] — real symmetric spherical harmonics, sphere tessellation,
//!   gradient tables, and condition-number-driven direction subsampling.
//! - [`forward_model`] — multi-tensor signal generation, Rician noise,
//!   tissue response functions, DTI fitting, and phantom cohorts.
//! - [`csd`] — the non-negative quadratic programming engine and the
//!   single-tissue, multi-shell multi-tissue (MSMT), and single-shell
//!   three-tissue (SS3T) constrained deconvolution solvers.
//! - [`fod_analysis`] — peak extraction and apparent fiber density.
//! - [`metrics`] — agreement rate, angular error, confusion matrices, AFD
//!   error.
//! - [`regressor`] — toy-scale learned SH-to-FOD mapping (ridge / MLP with
//!   Adam training and early stopping).
//! - [`experiments`] — drivers for the consistency, input-direction
//!   ablation, and age domain-shift studies on synthetic cohorts.
//! - [`io`] — native volume format, a NIfTI-1 subset, and FSL-style
//!   gradient files.

pub mod csd;
pub mod error;
pub mod experiments;
pub mod fod_analysis;
pub mod forward_model;
pub mod io;
pub mod metrics;
pub mod regressor;
pub mod sphere_sh;
pub mod volume;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
