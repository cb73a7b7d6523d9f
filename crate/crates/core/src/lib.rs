//! Finite-sample inference for high-dimensional logistic regression by
//! repro samples.
//!
//! The pipeline builds a small candidate set of supports from artificial
//! noise draws, screens them with a Monte Carlo model confidence test, and
//! inverts likelihood-ratio tests over the surviving supports to obtain
//! confidence regions for linear functions of the coefficients.

pub mod candidate;
pub mod coef_inference;
pub mod error;
pub mod model_confidence;
pub mod sampler;
pub mod solvers;
pub mod stats_util;
pub mod types;

pub use error::{Error, Result};
pub use sampler::RngStream;
pub use types::*;
