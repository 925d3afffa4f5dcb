//! All-at-once random-walk Metropolis-Hastings.
//!
//! The same kernel drives the SMC mutation chains and the standalone
//! long-chain reference sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::parallel::{derive_stream, Stage, StreamKey};
use crate::problem::{log_posterior_tempered, Target};

/// Fraction of a reference chain discarded as burn-in unless configured.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<P = ()> {
    pub theta: Vec<f64>,
    /// The target evaluated at `theta`.
    pub log_target: f64,
    pub accept_count: u64,
    pub step: u64,
    /// Whatever the target evaluation produced alongside its value, kept in
    /// sync with `theta`.
    pub payload: P,
}

impl<P> ChainState<P> {
    pub fn new(theta: Vec<f64>, log_target: f64, payload: P) -> Self {
        Self {
            theta,
            log_target,
            accept_count: 0,
            step: 0,
            payload,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.step == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.step as f64
        }
    }
}

/// The Metropolis accept decision for a move from `current` to `proposed`
/// log target. Always consumes exactly one uniform draw.
pub fn accept_move<R: Rng + ?Sized>(current: f64, proposed: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    let diff = proposed - current;
    diff >= 0.0 || u.ln() < diff
}

/// One random-walk step: proposes `theta + scales * eta` with standard
/// normal `eta`, evaluates the target there exactly once, and accepts with
/// probability `min(1, exp(diff))`. Returns whether the move was accepted.
pub fn rw_step<P, R, F>(
    state: &mut ChainState<P>,
    scales: &[f64],
    rng: &mut R,
    log_target: F,
) -> Result<bool>
where
    R: Rng + ?Sized,
    F: FnOnce(&[f64]) -> Result<(f64, P)>,
{
    if state.log_target == f64::NEG_INFINITY || state.log_target.is_nan() {
        return Err(Error::Contract(format!(
            "chain state has log target {} at step {}",
            state.log_target, state.step
        )));
    }
    if scales.len() != state.theta.len() {
        return Err(Error::Contract(format!(
            "{} proposal scales for {} parameters",
            scales.len(),
            state.theta.len()
        )));
    }
    let proposal: Vec<f64> = state
        .theta
        .iter()
        .zip(scales)
        .map(|(&x, &s)| {
            let eta: f64 = rng.sample(StandardNormal);
            x + s * eta
        })
        .collect();
    let (lt, payload) = log_target(&proposal)?;
    let accepted = accept_move(state.log_target, lt, rng);
    if accepted {
        state.theta = proposal;
        state.log_target = lt;
        state.payload = payload;
        state.accept_count += 1;
    }
    state.step += 1;
    Ok(accepted)
}

/// Every state of a chain, starting with the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain<P> {
    pub states: Vec<Vec<f64>>,
    pub payloads: Vec<P>,
    pub accepted: u64,
    /// Target evaluations performed, equal to the iteration count.
    pub evaluations: u64,
}

impl<P> Chain<P> {
    pub fn acceptance_rate(&self) -> f64 {
        let steps = self.states.len().saturating_sub(1);
        if steps == 0 {
            0.0
        } else {
            self.accepted as f64 / steps as f64
        }
    }

    /// States after dropping the leading `fraction` of the chain.
    pub fn after_burn_in(&self, fraction: f64) -> &[Vec<f64>] {
        let skip = ((self.states.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        &self.states[skip.min(self.states.len())..]
    }

    /// Column `j` of the post-burn-in states.
    pub fn marginal(&self, j: usize, burn_in: f64) -> Vec<f64> {
        self.after_burn_in(burn_in).iter().map(|t| t[j]).collect()
    }
}

/// Runs `iterations` steps from `start`, recording every state.
/// `log_target` receives the proposal and the step index.
pub fn run_mcmc<P, R, F>(
    start: ChainState<P>,
    mut log_target: F,
    iterations: u64,
    scales: &[f64],
    rng: &mut R,
) -> Result<Chain<P>>
where
    P: Clone,
    R: Rng + ?Sized,
    F: FnMut(&[f64], u64) -> Result<(f64, P)>,
{
    let mut state = start;
    if state.log_target == f64::NEG_INFINITY || state.log_target.is_nan() {
        return Err(Error::Contract("chain must start inside the support".into()));
    }
    let cap = usize::try_from(iterations).unwrap_or(usize::MAX).saturating_add(1);
    let mut states = Vec::with_capacity(cap.min(1 << 24));
    let mut payloads = Vec::with_capacity(cap.min(1 << 24));
    states.push(state.theta.clone());
    payloads.push(state.payload.clone());
    for it in 0..iterations {
        rw_step(&mut state, scales, rng, |p| log_target(p, it))?;
        states.push(state.theta.clone());
        payloads.push(state.payload.clone());
    }
    Ok(Chain {
        states,
        payloads,
        accepted: state.accept_count,
        evaluations: iterations,
    })
}

/// Per-state record of a reference chain on a calibration target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainPoint {
    pub log_lik: f64,
}

/// Reference posterior chain on `target` at full likelihood. The start point
/// is evaluated once before the chain; the chain itself performs exactly
/// `iterations` further evaluations.
pub fn run_mcmc_target<T: Target + ?Sized>(
    target: &T,
    theta0: &[f64],
    scales: &[f64],
    iterations: u64,
    master_seed: u64,
) -> Result<Chain<ChainPoint>> {
    let key = |step: u64| {
        StreamKey::new(master_seed, Stage::Mutation)
            .cycle(0)
            .proposal(step)
    };
    let (lt0, eval0) = log_posterior_tempered(target, theta0, 1.0, &StreamKey::new(master_seed, Stage::Init))?;
    let Some(eval0) = eval0.filter(|_| lt0.is_finite()) else {
        return Err(Error::Contract(format!(
            "start point {theta0:?} has zero posterior density"
        )));
    };
    let start = ChainState::new(
        theta0.to_vec(),
        lt0,
        ChainPoint {
            log_lik: eval0.log_lik,
        },
    );
    let mut rng = derive_stream(&StreamKey::new(master_seed, Stage::Mutation));
    run_mcmc(
        start,
        |p, step| {
            let (lt, eval) = log_posterior_tempered(target, p, 1.0, &key(step + 1))?;
            let log_lik = eval.map_or(f64::NEG_INFINITY, |e| e.log_lik);
            Ok((lt, ChainPoint { log_lik }))
        },
        iterations,
        scales,
        &mut rng,
    )
}
