//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use smc_calibrate::io::config::{load_config, RunConfig};
use smc_calibrate::param_space::{ParamSpace, ParamSpec, Prior};
use smc_calibrate::parallel::StreamKey;
use smc_calibrate::problem::{Evaluation, Target};
use smc_calibrate::Result;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn shipped_config(name: &str) -> RunConfig {
    load_config(&repo_root().join("configs").join(name)).expect("shipped config loads")
}

/// Independent normal priors `N(0, prior_var)` with a Gaussian likelihood
/// centred at `obs` with variance `lik_var` in every coordinate. The
/// posterior is normal with known moments.
pub struct GaussianTarget {
    space: ParamSpace,
    pub prior_var: f64,
    pub obs: Vec<f64>,
    pub lik_var: f64,
}

impl GaussianTarget {
    pub fn new(obs: Vec<f64>, prior_var: f64, lik_var: f64) -> Self {
        let params = (0..obs.len())
            .map(|j| {
                ParamSpec::new(
                    format!("x{j}"),
                    Prior::Normal {
                        mean: 0.0,
                        variance: prior_var,
                    },
                )
                .unwrap()
            })
            .collect();
        Self {
            space: ParamSpace::new(params).unwrap(),
            prior_var,
            obs,
            lik_var,
        }
    }

    /// Posterior mean and variance of one coordinate at exponent `gamma`.
    pub fn posterior(&self, j: usize, gamma: f64) -> (f64, f64) {
        let precision = 1.0 / self.prior_var + gamma / self.lik_var;
        let var = 1.0 / precision;
        (var * gamma * self.obs[j] / self.lik_var, var)
    }
}

impl Target for GaussianTarget {
    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn evaluate(&self, theta: &[f64], _key: &StreamKey) -> Result<Evaluation> {
        let ll = theta
            .iter()
            .zip(&self.obs)
            .map(|(t, o)| -0.5 * (t - o).powi(2) / self.lik_var)
            .sum();
        Ok(Evaluation::new(ll))
    }
}

/// Same likelihood value everywhere.
pub struct ConstantTarget {
    pub space: ParamSpace,
    pub value: f64,
}

impl Target for ConstantTarget {
    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn evaluate(&self, _theta: &[f64], _key: &StreamKey) -> Result<Evaluation> {
        Ok(Evaluation::new(self.value))
    }
}

pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-(x - mean) / (2.0 * var).sqrt())
}
