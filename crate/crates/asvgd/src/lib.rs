//! Particle-based sampling with accelerated Stein variational gradient
//! descent (ASVGD) and reference samplers.
//!
//! The crate evolves an ensemble of interacting particles so that their
//! empirical distribution approximates a target density `pi ~ exp(-f)`.
//! ASVGD augments Stein variational gradient descent with per-particle
//! momenta, a regularized kernel solve for the momentum in density space,
//! and restart-based damping.
//!
//! Modules:
//! - [`ensemble`]: particle state, Gaussian initialization, CSV snapshots
//! - [`kernels`]: bilinear and Gaussian kernels and kernel matrices
//! - [`targets`]: target potentials with gradients and log-normalizers
//! - [`asvgd`]: the accelerated stepper (position step, kernel solve,
//!   restarts, momentum updates)
//! - [`baselines`]: SVGD, ULA, MALA and underdamped Langevin steps
//! - [`metrics`]: KDE-based KL divergence estimation and step records
//! - [`linalg`]: dense Cholesky factorization used by the kernel solves

use std::path::PathBuf;

pub mod asvgd;
pub mod baselines;
pub mod ensemble;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod targets;

pub use crate::asvgd::{asvgd_run, asvgd_run_from, AsvgdConfig, Damping, RunRecord, StepStats, TraceLag};
pub use crate::ensemble::{init_ensemble, Ensemble, InitSpec};
pub use crate::kernels::KernelSpec;
pub use crate::targets::Target;

/// Errors shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix that must be symmetric positive definite is not.
    #[error("{name} is not symmetric positive definite")]
    NotSpd { name: String },

    /// Inputs whose shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value outside its documented domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A sampler produced non-finite state or an unsolvable linear system.
    #[error("numerical abort at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    /// Filesystem failures, always reported with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed on-disk data.
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
