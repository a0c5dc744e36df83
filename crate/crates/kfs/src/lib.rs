//! Nonparametric feature selection with exponential-mixture kernels.
//!
//! The library fits a kernel ridge regression whose kernel operates on
//! per-coordinate weighted distances, and selects features by running
//! projected gradient descent on the feature weights over the nonnegative
//! l1 ball. An l1-geometry kernel (Laplace) responds to nonlinear signal
//! that an l2-geometry kernel (Gaussian) misses, which is the effect the
//! experiment harness measures.
//!
//! Module layout:
//!
//! * [`kernels`] - mixture kernels, weighted distances, Gram assembly
//! * [`krr`] - datasets and the dual ridge solve
//! * [`gradient`] - closed-form objective gradient plus a finite-difference oracle
//! * [`optimize`] - l1-ball projection, projected gradient descent, hierarchical rounds
//! * [`signals`] - synthetic generators, effect-size estimators, a Fourier self-check
//! * [`experiments`] - ROC sweeps and the gradient-concentration trend harness

pub mod error;
pub mod experiments;
pub mod gradient;
pub mod kernels;
pub mod krr;
pub mod optimize;
pub mod rng;
pub mod signals;

pub use error::{KfsError, Result};
pub use gradient::{full_gradient, GradientReport};
pub use kernels::KernelSpec;
pub use krr::{solve_krr, Dataset, KrrFit};
pub use optimize::{
    hier_select, pgd_select, pgd_select_pinned, project_l1_nonneg, Beta, SelectionConfig,
    SelectionResult, Stepsize,
};
pub use signals::ModelSpec;

/// Version string reported by the CLI and the C API.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Schema tag stamped into every JSON artifact the tools emit.
pub const SCHEMA: &str = "kfs/1";
