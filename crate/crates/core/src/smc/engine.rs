use std::time::Instant;

use super::ops::{
    bhattacharyya, calibrate_stop_threshold, effective_sample_size, importance_reweight,
    multinomial_resample, select_increment, ThresholdSpec,
};
use super::{
    CalibrationResult, Counters, CycleRecord, Particle, SmcSettings, Snapshot, StageTiming,
    TemperState,
};
use crate::error::{Error, Result};
use crate::mcmc::{rw_step, ChainState};
use crate::parallel::{derive_stream, Executor, Stage, StreamKey};
use crate::param_space::ParameterVector;
use crate::problem::{log_posterior_tempered, ResolvedMetric, Target};
use crate::stats::weighted_sd;

/// Mutation stopping rule with a resolved metric and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSpec {
    pub k: u64,
    pub epsilon: f64,
    pub bins: usize,
    pub metric: ResolvedMetric,
    pub max_updates: u64,
}

/// Everything needed to continue a run after a completed cycle.
#[derive(Debug, Clone)]
pub struct SmcState {
    /// Last completed cycle; 0 after initialization.
    pub cycle: usize,
    pub swarm: Vec<Particle>,
    pub temper: TemperState,
    pub records: Vec<CycleRecord>,
    pub epsilon: f64,
    pub counters: Counters,
    pub snapshots: Vec<Snapshot>,
    pub timings: Vec<StageTiming>,
}

impl SmcState {
    pub fn is_complete(&self) -> bool {
        self.temper.is_complete()
    }

    pub fn into_result(self) -> CalibrationResult {
        CalibrationResult {
            final_swarm: self.swarm,
            snapshots: self.snapshots,
            temper: self.temper,
            cycles: self.records,
            epsilon: self.epsilon,
            counters: self.counters,
            timings: self.timings,
        }
    }
}

fn eval_key(seed: u64, cycle: usize, particle: usize, update: u64) -> StreamKey {
    StreamKey::new(seed, Stage::Likelihood)
        .cycle(cycle as u64)
        .particle(particle as u64)
        .proposal(update)
}

fn check_storm(stage: String, failed: u64, total: u64, tolerance: f64) -> Result<()> {
    if total > 0 && failed as f64 > tolerance * total as f64 {
        return Err(Error::ModelFailureStorm {
            stage,
            failed: failed as usize,
            total: total as usize,
            tolerance,
        });
    }
    Ok(())
}

fn resolve_stopping<T: Target + ?Sized>(
    target: &T,
    settings: &SmcSettings,
    epsilon: f64,
) -> Result<StoppingSpec> {
    Ok(StoppingSpec {
        k: settings.k,
        epsilon,
        bins: settings.bins,
        metric: settings.metric.resolve(target.space())?,
        max_updates: settings.max_updates,
    })
}

/// Draws the prior swarm, evaluates it, and fixes the stopping threshold.
pub fn initialize<T: Target + ?Sized>(
    target: &T,
    settings: &SmcSettings,
    exec: &Executor,
) -> Result<SmcState> {
    settings.validate()?;
    let seed = settings.master_seed;
    let space = target.space();
    let metric = settings.metric.resolve(space)?;
    let n = settings.particles;
    let start = Instant::now();

    let indices: Vec<usize> = (0..n).collect();
    let drawn = exec.map_with_streams(
        &indices,
        |i| StreamKey::new(seed, Stage::Init).particle(i as u64),
        |_, _, rng| Ok(space.sample_prior(rng)),
    )?;
    let evals = exec.map(&drawn, |i, theta| target.evaluate(theta, &eval_key(seed, 0, i, 0)))?;
    let failures = evals.iter().filter(|e| e.failed).count() as u64;
    check_storm("initialization".into(), failures, n as u64, settings.max_failure_fraction)?;

    let swarm: Vec<Particle> = drawn
        .into_iter()
        .zip(&evals)
        .map(|(theta, e)| {
            let m = metric.value(&theta, e);
            Particle {
                theta,
                log_lik: e.log_lik,
                weight: 1.0 / n as f64,
                metric: m,
            }
        })
        .collect();

    let epsilon = match settings.epsilon {
        Some(e) => e,
        None => {
            let survey: Vec<f64> = swarm
                .iter()
                .map(|p| p.metric)
                .filter(|m| m.is_finite())
                .collect();
            calibrate_stop_threshold(
                &survey,
                &ThresholdSpec {
                    samples: settings.threshold_samples,
                    n,
                    bins: settings.bins,
                    quantile: settings.threshold_quantile,
                },
                seed,
            )?
        }
    };
    log::info!("initialized {n} particles; stopping threshold {epsilon:.6}");

    Ok(SmcState {
        cycle: 0,
        snapshots: vec![Snapshot {
            cycle: 0,
            particles: swarm.clone(),
        }],
        swarm,
        temper: TemperState::default(),
        records: Vec::new(),
        epsilon,
        counters: Counters {
            model_evaluations: n as u64,
            model_failures: failures,
            sequential_updates: 0,
        },
        timings: vec![StageTiming {
            cycle: 0,
            stage: "initialization".into(),
            seconds: start.elapsed().as_secs_f64(),
        }],
    })
}

/// Random-walk scales `2.38 / sqrt(d)` times the weighted standard
/// deviation of each coordinate.
pub fn proposal_scales(swarm: &[Particle], weights: &[f64]) -> Vec<f64> {
    let d = swarm.first().map_or(0, |p| p.theta.len());
    let rows: Vec<&[f64]> = swarm.iter().map(|p| p.theta.as_slice()).collect();
    let c = 2.38 / (d as f64).sqrt();
    (0..d).map(|j| c * weighted_sd(&rows, weights, j)).collect()
}

#[derive(Debug, Clone)]
pub struct MutationOutcome {
    pub swarm: Vec<Particle>,
    pub updates: u64,
    pub db_trace: Vec<f64>,
    pub hit_max_updates: bool,
    pub accepted: u64,
    pub model_evaluations: u64,
    pub model_failures: u64,
}

#[derive(Clone)]
struct Walker {
    state: ChainState<(f64, f64)>,
}

struct BatchResult {
    walker: Walker,
    evaluations: u64,
    failures: u64,
}

/// Runs one random-walk chain per particle targeting `L^gamma p`, in
/// batches of `stop.k` updates. From the second batch on, the swarm's
/// metric values at the last two checkpoints are compared and mutation
/// stops once their Bhattacharyya distance falls below `stop.epsilon`, or
/// when `stop.max_updates` updates have been made.
#[allow(clippy::too_many_arguments)]
pub fn mutate<T: Target + ?Sized>(
    target: &T,
    swarm: &[Particle],
    gamma: f64,
    scales: &[f64],
    stop: &StoppingSpec,
    cycle: usize,
    master_seed: u64,
    max_failure_fraction: f64,
    exec: &Executor,
) -> Result<MutationOutcome> {
    let space = target.space();
    let mut walkers = Vec::with_capacity(swarm.len());
    for p in swarm {
        let lp = space.log_prior_density(&p.theta)?;
        let lt = crate::likelihood::tempered_log_weight(p.log_lik, gamma)? + lp;
        walkers.push(Walker {
            state: ChainState::new(p.theta.to_vec(), lt, (p.log_lik, p.metric)),
        });
    }

    let mut done = 0u64;
    let mut batch = 0u64;
    let mut db_trace = Vec::new();
    let mut previous: Option<Vec<f64>> = None;
    let mut evaluations = 0u64;
    let mut failures = 0u64;
    let mut converged = false;

    while done < stop.max_updates {
        batch += 1;
        let steps = stop.k.min(stop.max_updates - done);
        let results = exec.map(&walkers, |i, w| {
            let mut rng = derive_stream(
                &StreamKey::new(master_seed, Stage::Mutation)
                    .cycle(cycle as u64)
                    .particle(i as u64)
                    .proposal(batch),
            );
            let mut walker = w.clone();
            let (mut evals, mut fails) = (0u64, 0u64);
            for s in 0..steps {
                let key = eval_key(master_seed, cycle, i, done + s + 1);
                rw_step(&mut walker.state, scales, &mut rng, |prop| {
                    let (lt, eval) = log_posterior_tempered(target, prop, gamma, &key)?;
                    Ok(match eval {
                        Some(e) => {
                            evals += 1;
                            fails += u64::from(e.failed);
                            (lt, (e.log_lik, stop.metric.value(prop, &e)))
                        }
                        None => (lt, (f64::NEG_INFINITY, f64::NAN)),
                    })
                })?;
            }
            Ok(BatchResult {
                walker,
                evaluations: evals,
                failures: fails,
            })
        })?;
        let (batch_evals, batch_fails) = results
            .iter()
            .fold((0, 0), |(e, f), r| (e + r.evaluations, f + r.failures));
        evaluations += batch_evals;
        failures += batch_fails;
        check_storm(
            format!("cycle {cycle} mutation batch {batch}"),
            batch_fails,
            batch_evals,
            max_failure_fraction,
        )?;
        walkers = results.into_iter().map(|r| r.walker).collect();
        done += steps;

        let checkpoint: Vec<f64> = walkers.iter().map(|w| w.state.payload.1).collect();
        if let Some(prev) = previous.take() {
            let db = bhattacharyya(&prev, &checkpoint, stop.bins)?;
            db_trace.push(db);
            if db < stop.epsilon {
                converged = true;
                break;
            }
        }
        previous = Some(checkpoint);
    }
    let hit_max_updates = !converged;
    if hit_max_updates {
        log::warn!(
            "cycle {cycle}: mutation stopped at the {} update cap without meeting the stopping rule",
            stop.max_updates
        );
    }

    let n = walkers.len();
    let accepted = walkers.iter().map(|w| w.state.accept_count).sum();
    let swarm = walkers
        .into_iter()
        .map(|w| {
            Ok(Particle {
                theta: ParameterVector::new(w.state.theta)?,
                log_lik: w.state.payload.0,
                weight: 1.0 / n as f64,
                metric: w.state.payload.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MutationOutcome {
        swarm,
        updates: done,
        db_trace,
        hit_max_updates,
        accepted,
        model_evaluations: evaluations,
        model_failures: failures,
    })
}

/// Runs one reweight, resample, mutate cycle.
pub fn run_cycle<T: Target + ?Sized>(
    target: &T,
    settings: &SmcSettings,
    exec: &Executor,
    state: &mut SmcState,
) -> Result<()> {
    if state.is_complete() {
        return Err(Error::Contract("the schedule is already complete".into()));
    }
    let cycle = state.cycle + 1;
    let seed = settings.master_seed;
    let n = settings.particles;
    let stop = resolve_stopping(target, settings, state.epsilon)?;

    let t0 = Instant::now();
    let log_liks: Vec<f64> = state.swarm.iter().map(|p| p.log_lik).collect();
    let gamma = select_increment(
        &log_liks,
        state.temper.cumulative,
        settings.gamma_min,
        settings.ess_thresh,
    )?;
    let weights = importance_reweight(&log_liks, gamma)?;
    let ess = effective_sample_size(&weights)?;
    let mut temper = state.temper.clone();
    let cumulative = temper.push(gamma)?;
    let scales = proposal_scales(&state.swarm, &weights);
    let mut rng = derive_stream(&StreamKey::new(seed, Stage::Resample).cycle(cycle as u64));
    let picks = multinomial_resample(&weights, n, &mut rng)?;
    let resampled: Vec<Particle> = picks
        .iter()
        .map(|&i| Particle {
            weight: 1.0 / n as f64,
            ..state.swarm[i].clone()
        })
        .collect();
    let t_resample = t0.elapsed().as_secs_f64();
    log::info!("cycle {cycle}: gamma {gamma:.6}, cumulative {cumulative:.6}, ESS {ess:.1}");

    let t1 = Instant::now();
    let out = mutate(
        target,
        &resampled,
        cumulative,
        &scales,
        &stop,
        cycle,
        seed,
        settings.max_failure_fraction,
        exec,
    )?;
    let t_mutate = t1.elapsed().as_secs_f64();
    log::info!(
        "cycle {cycle}: {} mutation updates, D_B trace {:?}",
        out.updates,
        out.db_trace
    );

    state.records.push(CycleRecord {
        cycle,
        gamma,
        cumulative,
        ess,
        proposal_scales: scales,
        updates: out.updates,
        db_trace: out.db_trace,
        hit_max_updates: out.hit_max_updates,
        acceptance_rate: out.accepted as f64 / (n as f64 * out.updates as f64),
        model_evaluations: out.model_evaluations,
        model_failures: out.model_failures,
    });
    state.counters.model_evaluations += out.model_evaluations;
    state.counters.model_failures += out.model_failures;
    state.counters.sequential_updates += out.updates;
    state.temper = temper;
    state.cycle = cycle;
    state.swarm = out.swarm;
    state.snapshots.push(Snapshot {
        cycle,
        particles: state.swarm.clone(),
    });
    state.timings.push(StageTiming {
        cycle,
        stage: "reweight_resample".into(),
        seconds: t_resample,
    });
    state.timings.push(StageTiming {
        cycle,
        stage: "mutation".into(),
        seconds: t_mutate,
    });
    Ok(())
}

/// Continues `state` until the full likelihood is incorporated, calling
/// `observer` after each cycle.
pub fn run_smc_from<T, F>(
    target: &T,
    settings: &SmcSettings,
    exec: &Executor,
    mut state: SmcState,
    mut observer: F,
) -> Result<CalibrationResult>
where
    T: Target + ?Sized,
    F: FnMut(&SmcState) -> Result<()>,
{
    settings.validate()?;
    while !state.is_complete() {
        run_cycle(target, settings, exec, &mut state)?;
        observer(&state)?;
    }
    Ok(state.into_result())
}

/// Full run from the prior. `observer` sees the initialized state and the
/// state after every cycle.
pub fn run_smc<T, F>(
    target: &T,
    settings: &SmcSettings,
    exec: &Executor,
    mut observer: F,
) -> Result<CalibrationResult>
where
    T: Target + ?Sized,
    F: FnMut(&SmcState) -> Result<()>,
{
    let state = initialize(target, settings, exec)?;
    observer(&state)?;
    run_smc_from(target, settings, exec, state, observer)
}
