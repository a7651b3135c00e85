//! Debiased estimation of causal and semiparametric target parameters from
//! linear moment conditions, without sample splitting.
//!
//! Nuisance functions are fit with subsample-bagged base learners (1-NN or
//! fully grown regression trees). When the subsample size grows slower than
//! `sqrt(n)`, such ensembles are leave-one-out stable enough that fitting on
//! the full sample and evaluating the moment on the same sample still yields
//! valid normal-approximation confidence intervals; the crate also ships the
//! cross-fitting variant, an estimator of the sandwich variance, and the
//! empirical machinery to measure stability and check when full-sample reuse
//! is trustworthy.
//!
//! Entry points:
//! - [`estimator::estimate`]: fit nuisances, solve the moment, report
//!   standard errors and confidence intervals.
//! - [`simulation`]: synthetic partially linear data and the Monte Carlo
//!   coverage harness.
//! - [`diagnostics`]: leave-one-out stability norms, stochastic
//!   equicontinuity statistics, subsample-regime checks and a worked
//!   nearest-neighbor counterexample where full-sample reuse fails.
//!
//! The `examples/` directory contains one runnable example per capability;
//! the `stable-dml` binary exposes the same operations as subcommands.

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod learners;
pub mod moments;
pub mod sampling;
pub mod seed;
pub mod simulation;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use seed::{SeedSpec, Stream};
