//! Latent factor models for discretely observed multivariate diffusions:
//! simulation, minimum-contrast estimation from the realised covariance,
//! goodness-of-fit testing and Monte Carlo replication.

pub mod chi2;
pub mod error;
pub mod estimator;
pub mod matrixcalc;
pub mod mc_harness;
pub mod model;
pub mod sde_sim;
pub mod stats;

pub use sde_sim::two_factor_design;

pub use error::{Error, Result};
