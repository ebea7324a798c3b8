//! Gram–Schmidt Walk experimental design with randomized pivot ordering,
//! Horvitz–Thompson estimation, the coupled skeletal process, and a Monte
//! Carlo harness for checking their finite-sample and asymptotic behaviour.

// `!(x >= t)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod montecarlo;
pub mod rng;
pub mod sampler;
pub mod skeletal;

pub use error::{GswError, Result};
pub use linalg::{build_setup, CovariateSetup};
pub use sampler::{run_gsw, DesignState};
