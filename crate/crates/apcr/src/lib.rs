//! Adaptive principal component regression for error-in-variables data.
//!
//! The estimator ([`pcr`]) learns a low-rank subspace from noisy covariates
//! gathered under an adaptive design, regresses in that subspace, and
//! reports explicit finite-sample error bounds built from time-uniform
//! concentration ([`concentration`]). Two applications sit on top: a
//! noisy-context linear bandit ([`bandit`]) and synthetic interventions on
//! panel data ([`panel`]). [`experiments`] holds the seeded Monte Carlo
//! harnesses used by the CLI and the acceptance tests.

pub mod bandit;
pub mod concentration;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod panel;
pub mod parallel;
pub mod pcr;
pub mod sampling;
pub mod selftest;

pub use concentration::{BoundConfig, NoiseRegime};
pub use error::{Error, Result};
pub use pcr::{BoundStatus, PcrState, ProjectorScope};
