//! A calibration problem: priors, a forward model and a likelihood, seen by
//! the samplers as a single target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::{ForwardModel, ModelInput};
use crate::likelihood::Likelihood;
use crate::param_space::ParamSpace;
use crate::parallel::StreamKey;

/// What to do when a forward-model run fails.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Treat the run as having zero likelihood.
    #[default]
    NegInf,
    Abort,
}

/// Result of one likelihood evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Full, untempered log-likelihood.
    pub log_lik: f64,
    pub projections: BTreeMap<String, f64>,
    /// Set when the model run failed and the failure was absorbed as `-inf`.
    pub failed: bool,
}

impl Evaluation {
    pub fn new(log_lik: f64) -> Self {
        Self {
            log_lik,
            projections: BTreeMap::new(),
            failed: false,
        }
    }
}

/// Anything the samplers can calibrate: a parameter space plus a
/// log-likelihood. Each `evaluate` call counts as one forward-model run.
pub trait Target: Sync {
    fn space(&self) -> &ParamSpace;

    /// Evaluates the likelihood at transformed-space `theta`, which lies
    /// inside the prior support. `key` identifies the evaluation.
    fn evaluate(&self, theta: &[f64], key: &StreamKey) -> Result<Evaluation>;
}

/// The quantity `h(theta)` monitored by the mutation stopping rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// A coordinate of `theta`, in transformed space.
    Parameter(String),
    /// A named model projection.
    Projection(String),
}

/// A metric bound to a parameter space.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedMetric {
    Parameter(usize),
    Projection(String),
}

impl Metric {
    pub fn resolve(&self, space: &ParamSpace) -> Result<ResolvedMetric> {
        match self {
            Metric::Parameter(name) => space
                .index_of(name)
                .map(ResolvedMetric::Parameter)
                .ok_or_else(|| Error::Config(format!("metric parameter `{name}` is not defined"))),
            Metric::Projection(name) => Ok(ResolvedMetric::Projection(name.clone())),
        }
    }
}

impl ResolvedMetric {
    /// `h(theta)`; NaN when a projection is unavailable.
    pub fn value(&self, theta: &[f64], eval: &Evaluation) -> f64 {
        match self {
            ResolvedMetric::Parameter(i) => theta[*i],
            ResolvedMetric::Projection(name) => {
                eval.projections.get(name).copied().unwrap_or(f64::NAN)
            }
        }
    }
}

pub struct Problem {
    space: ParamSpace,
    model: Box<dyn ForwardModel>,
    likelihood: Likelihood,
    failure_policy: FailurePolicy,
    names: Vec<String>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("space", &self.space)
            .field("likelihood", &self.likelihood)
            .field("failure_policy", &self.failure_policy)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(
        space: ParamSpace,
        model: Box<dyn ForwardModel>,
        likelihood: Likelihood,
        failure_policy: FailurePolicy,
    ) -> Self {
        let names = space.names();
        Self {
            space,
            model,
            likelihood,
            failure_policy,
            names,
        }
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }
}

impl Target for Problem {
    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn evaluate(&self, theta: &[f64], key: &StreamKey) -> Result<Evaluation> {
        let natural = self.space.to_natural(theta);
        let input = ModelInput {
            names: &self.names,
            transformed: theta,
            natural: &natural,
        };
        match self.model.evaluate(&input, key) {
            Ok(output) => Ok(Evaluation {
                log_lik: self.likelihood.log_likelihood(&natural, &output)?,
                projections: output.projections,
                failed: false,
            }),
            Err(e) => match self.failure_policy {
                FailurePolicy::NegInf => {
                    log::debug!("model failure absorbed as zero likelihood: {e}");
                    Ok(Evaluation {
                        log_lik: f64::NEG_INFINITY,
                        projections: BTreeMap::new(),
                        failed: true,
                    })
                }
                FailurePolicy::Abort => Err(e.into()),
            },
        }
    }
}

/// `log_lik` scaled by `gamma` plus the log prior density, with the prior
/// checked first so that out-of-support points never reach the model.
pub fn log_posterior_tempered<T: Target + ?Sized>(
    target: &T,
    theta: &[f64],
    gamma: f64,
    key: &StreamKey,
) -> Result<(f64, Option<Evaluation>)> {
    let lp = target.space().log_prior_density(theta)?;
    if lp == f64::NEG_INFINITY {
        return Ok((f64::NEG_INFINITY, None));
    }
    let eval = target.evaluate(theta, key)?;
    let lt = crate::likelihood::tempered_log_weight(eval.log_lik, gamma)?;
    Ok((lt + lp, Some(eval)))
}
