//! Learning kernels for kernel ridge regression with an L2 constraint on the
//! combination weights.
//!
//! The crate is organized bottom-up:
//!
//! - [`kernels`]: base kernels, Gram matrices, weighted combinations.
//! - [`solver`]: fixed-kernel KRR, the interpolated fixed-point solver for
//!   the L2-constrained problem, a projected-gradient reference solver and an
//!   L1-constrained baseline.
//! - [`diagnostics`]: numerical checks of optimality conditions, stability
//!   bounds and related identities.
//! - [`data`]: dataset ingestion, n-gram features, splits and folds.
//! - [`experiment`]: the config-driven experiment runner behind the CLI.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
