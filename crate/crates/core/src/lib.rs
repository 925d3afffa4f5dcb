//! Adaptive sequential Monte Carlo for Bayesian calibration of black-box
//! forward models.

pub mod error;
pub mod forward_model;
pub mod io;
pub mod likelihood;
mod linalg;
pub mod mcmc;
pub mod parallel;
pub mod param_space;
pub mod problem;
pub mod smc;
pub mod stats;

pub use error::{Error, ModelError, Result};
