//! Bayesian estimation of the effective reproduction number from weekly
//! wastewater concentration data.
//!
//! The pipeline reads a weekly series ([`series`]), builds lag kernels
//! ([`kernels`]), optionally smooths the series with a local-linear-trend
//! state-space filter ([`ssm`]), and samples the renewal model ([`model`])
//! with adaptive Metropolis ([`mcmc`]). Convergence summaries live in
//! [`diagnostics`] and synthetic data generation in [`simulate`].

pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod mcmc;
pub mod model;
pub mod series;
pub mod simulate;
pub mod ssm;

pub use error::{Error, Result};
