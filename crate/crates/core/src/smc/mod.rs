//! Adaptive tempered sequential Monte Carlo.
//!
//! A swarm drawn from the prior is moved through intermediate posteriors
//! `L^gamma p` by repeated reweight, resample and mutate cycles. Each
//! increment is chosen so the reweighted swarm keeps a target effective
//! sample size, and each mutation phase runs until a histogram-distance
//! check says the monitored quantity has stopped moving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParameterVector;
use crate::problem::Metric;

mod engine;
mod ops;

pub use engine::{
    initialize, mutate, proposal_scales, run_cycle, run_smc, run_smc_from, MutationOutcome,
    SmcState, StoppingSpec,
};
pub use ops::{
    bhattacharyya, calibrate_stop_threshold, effective_sample_size, ess_for_increment,
    importance_reweight, multinomial_resample, select_increment, ThresholdSpec, GAMMA_TOLERANCE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Transformed-space position.
    pub theta: ParameterVector,
    /// Full, untempered log-likelihood at `theta`.
    pub log_lik: f64,
    pub weight: f64,
    /// Monitored quantity `h(theta)`; NaN when unavailable.
    pub metric: f64,
}

impl Particle {
    /// Bitwise equality, treating NaN metrics as equal to themselves.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.theta.len() == other.theta.len()
            && self
                .theta
                .iter()
                .zip(other.theta.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.log_lik.to_bits() == other.log_lik.to_bits()
            && self.weight.to_bits() == other.weight.to_bits()
            && self.metric.to_bits() == other.metric.to_bits()
    }
}

/// The tempering schedule so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemperState {
    pub increments: Vec<f64>,
    /// Sum of the increments.
    pub cumulative: f64,
}

impl TemperState {
    pub fn is_complete(&self) -> bool {
        self.cumulative == 1.0
    }

    /// Appends `gamma`. An increment equal to the remaining `1 - cumulative`
    /// completes the schedule with a cumulative exponent of exactly 1.
    pub fn push(&mut self, gamma: f64) -> Result<f64> {
        let remainder = 1.0 - self.cumulative;
        if !(gamma > 0.0 && gamma <= remainder) {
            return Err(Error::Contract(format!(
                "increment {gamma} outside (0, {remainder}]"
            )));
        }
        self.increments.push(gamma);
        self.cumulative = if gamma == remainder {
            1.0
        } else {
            self.cumulative + gamma
        };
        Ok(self.cumulative)
    }
}

/// Engine settings. Field defaults follow [`SmcSettings::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmcSettings {
    pub particles: usize,
    pub gamma_min: f64,
    pub ess_thresh: f64,
    /// Mutation batch length between stopping-rule checks.
    pub k: u64,
    /// Histogram bins of the stopping rule.
    pub bins: usize,
    pub max_updates: u64,
    pub metric: Metric,
    /// Stopping threshold; calibrated from the prior swarm when absent.
    pub epsilon: Option<f64>,
    pub threshold_samples: usize,
    pub threshold_quantile: f64,
    /// Largest tolerated fraction of failed model runs in any stage.
    pub max_failure_fraction: f64,
    pub master_seed: u64,
}

impl SmcSettings {
    pub fn new(particles: usize, metric: Metric, master_seed: u64) -> Self {
        Self {
            particles,
            gamma_min: 0.1,
            ess_thresh: particles as f64 / 2.0,
            k: 7,
            bins: 200,
            max_updates: 100,
            metric,
            epsilon: None,
            threshold_samples: 1000,
            threshold_quantile: 0.975,
            max_failure_fraction: 0.5,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.particles < 2 {
            return fail(format!("particles must be >= 2, got {}", self.particles));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min < 1.0) {
            return fail(format!("gamma_min must lie in (0, 1), got {}", self.gamma_min));
        }
        if !(self.ess_thresh > 1.0 && self.ess_thresh <= self.particles as f64) {
            return fail(format!(
                "ess_thresh must lie in (1, {}], got {}",
                self.particles, self.ess_thresh
            ));
        }
        if self.k < 1 {
            return fail("k must be >= 1".into());
        }
        if self.bins < 2 {
            return fail(format!("bins must be >= 2, got {}", self.bins));
        }
        if self.max_updates < 2 * self.k {
            return fail(format!(
                "max_updates ({}) must be at least 2k ({})",
                self.max_updates,
                2 * self.k
            ));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return fail(format!("epsilon must be positive, got {e}"));
            }
        }
        if self.threshold_samples < 1 {
            return fail("threshold samples must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold_quantile) {
            return fail(format!(
                "threshold quantile must lie in [0, 1], got {}",
                self.threshold_quantile
            ));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return fail(format!(
                "max_failure_fraction must lie in [0, 1], got {}",
                self.max_failure_fraction
            ));
        }
        Ok(())
    }
}

/// Per-cycle trace entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub gamma: f64,
    pub cumulative: f64,
    /// ESS of the reweighted swarm before resampling.
    pub ess: f64,
    pub proposal_scales: Vec<f64>,
    pub updates: u64,
    /// Bhattacharyya distances between consecutive checkpoints.
    #[serde(with = "crate::io::extended_float::vec")]
    pub db_trace: Vec<f64>,
    /// Set when mutation stopped at `max_updates` without meeting the rule.
    pub hit_max_updates: bool,
    pub acceptance_rate: f64,
    pub model_evaluations: u64,
    pub model_failures: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Forward-model runs, including those that failed.
    pub model_evaluations: u64,
    pub model_failures: u64,
    /// Mutation updates performed one after another by each particle; the
    /// number of model runs that cannot be parallelized away.
    pub sequential_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub cycle: usize,
    pub stage: String,
    pub seconds: f64,
}

/// A swarm as it stood at the end of a cycle; cycle 0 is the prior swarm.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub cycle: usize,
    pub particles: Vec<Particle>,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub final_swarm: Vec<Particle>,
    pub snapshots: Vec<Snapshot>,
    pub temper: TemperState,
    pub cycles: Vec<CycleRecord>,
    pub epsilon: f64,
    pub counters: Counters,
    pub timings: Vec<StageTiming>,
}

fn swarm_bits_eq(a: &[Particle], b: &[Particle]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bits_eq(y))
}

fn floats_bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn record_bits_eq(a: &CycleRecord, b: &CycleRecord) -> bool {
    a.cycle == b.cycle
        && a.gamma.to_bits() == b.gamma.to_bits()
        && a.cumulative.to_bits() == b.cumulative.to_bits()
        && a.ess.to_bits() == b.ess.to_bits()
        && floats_bits_eq(&a.proposal_scales, &b.proposal_scales)
        && a.updates == b.updates
        && floats_bits_eq(&a.db_trace, &b.db_trace)
        && a.hit_max_updates == b.hit_max_updates
        && a.acceptance_rate.to_bits() == b.acceptance_rate.to_bits()
        && a.model_evaluations == b.model_evaluations
        && a.model_failures == b.model_failures
}

impl CalibrationResult {
    /// Bit-for-bit equality of everything except wall-clock timings.
    pub fn outcome_eq(&self, other: &Self) -> bool {
        swarm_bits_eq(&self.final_swarm, &other.final_swarm)
            && self.snapshots.len() == other.snapshots.len()
            && self
                .snapshots
                .iter()
                .zip(&other.snapshots)
                .all(|(a, b)| a.cycle == b.cycle && swarm_bits_eq(&a.particles, &b.particles))
            && floats_bits_eq(&self.temper.increments, &other.temper.increments)
            && self.temper.cumulative.to_bits() == other.temper.cumulative.to_bits()
            && self.cycles.len() == other.cycles.len()
            && self.cycles.iter().zip(&other.cycles).all(|(a, b)| record_bits_eq(a, b))
            && self.epsilon.to_bits() == other.epsilon.to_bits()
            && self.counters == other.counters
    }

    /// Column `j` of the final swarm.
    pub fn marginal(&self, j: usize) -> Vec<f64> {
        self.final_swarm.iter().map(|p| p.theta[j]).collect()
    }

    pub fn cycle_count(&self) -> usize {
        self.cycles.len()
    }
}
