//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The toy-problem criteria use the shipped `configs/toy_smc.toml` and
//! `configs/toy_mcmc.toml`, so the run takes several minutes on one core.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use smc_calibrate::forward_model::synthetic_multi_era_eval;
use smc_calibrate::io::config::{LikelihoodConfig, RunConfig};
use smc_calibrate::io::snapshot;
use smc_calibrate::io::summary::{compare_marginal, summarize, DEFAULT_LEVELS};
use smc_calibrate::likelihood::{GpCovariance, GpDiscrepancy, IndicatorTerm};
use smc_calibrate::mcmc::{accept_move, run_mcmc, run_mcmc_target};
use smc_calibrate::parallel::{parallel_map, Executor};
use smc_calibrate::problem::{Problem, Target};
use smc_calibrate::smc::{
    bhattacharyya, effective_sample_size, ess_for_increment, importance_reweight,
    multinomial_resample, run_smc, run_smc_from, select_increment, CalibrationResult,
    SmcSettings,
};
use smc_calibrate::stats::{ks_sorted, mean, sorted, variance};
use smc_calibrate::{Error, Result};

use common::{repo_root, shipped_config};

// Criterion 1
const MEAN_GAP: f64 = 0.05;
const INTERVAL_GAP: f64 = 0.1;
const KS_MAX: f64 = 0.05;
const BURN_IN: f64 = 0.2;
/// Published toy estimates (theta, phi_delta, sigma2_delta, sigma2_eps).
const TABLE_ESTIMATES: [f64; 4] = [2.04, 1.21, 0.79, 0.44];
const SANITY_BAND: f64 = 0.5;
// Criterion 2
const SCHEDULE_SEEDS: u64 = 10;
const CYCLE_RANGE: (usize, usize) = (3, 6);
// Criterion 3
const MAX_SEQUENTIAL_DEPTH: u64 = 1000;
// Criterion 4
const HAND_CASE_TOL: f64 = 1e-12;
// Criterion 5
const GP_REL_TOL: f64 = 1e-8;
const ESS_REL_TOL: f64 = 1e-10;
const CHI2_LEVEL: f64 = 0.01;
const GRID_POINTS: usize = 10_000;
const GRID_TOL: f64 = 1e-4;
// Criterion 6
const RW_STEPS: u64 = 100_000;
const RW_SCALE: f64 = 2.38;
const ACCEPTANCE: (f64, f64) = (0.44, 0.03);
const MEAN_TOL: f64 = 0.05;
const VAR_TOL: f64 = 0.1;
const DISCRETE_STEPS: usize = 1_000_000;
// Criterion 7
const SPEEDUP_MIN: f64 = 1.5;
const SLEEP_ITEMS: usize = 64;
const SLEEP: Duration = Duration::from_millis(100);
const RESUME_AFTER: usize = 2;
// Criterion 8
const PRESET_KS_MIN: f64 = 0.1;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn report(n: u8, title: &str, outcome: Result<Outcome>) -> bool {
    let (pass, detail) = match outcome {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "criterion {n} [{}] {title}: {}",
        if pass { "PASS" } else { "FAIL" },
        detail
    );
    pass
}

fn natural_columns(problem: &Problem, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let space = problem.space();
    let nat: Vec<Vec<f64>> = rows.iter().map(|r| space.to_natural(r)).collect();
    (0..space.dim())
        .map(|j| nat.iter().map(|r| r[j]).collect())
        .collect()
}

fn swarm_rows(result: &CalibrationResult) -> Vec<Vec<f64>> {
    result.final_swarm.iter().map(|p| p.theta.to_vec()).collect()
}

/// The shipped toy SMC configuration, its problem and its run with one
/// worker. Shared by criteria 1, 2, 3 and 7.
struct ToyBaseline {
    cfg: RunConfig,
    problem: Problem,
    settings: SmcSettings,
    result: CalibrationResult,
    seconds: f64,
}

fn toy_baseline() -> Result<ToyBaseline> {
    let cfg = shipped_config("toy_smc.toml");
    let problem = cfg.build_problem("acceptance")?;
    let settings = cfg.smc_settings()?;
    let start = Instant::now();
    let result = run_smc(&problem, &settings, &Executor::new(1)?, |_| Ok(()))?;
    Ok(ToyBaseline {
        cfg,
        problem,
        settings,
        result,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn criterion_1(base: &ToyBaseline) -> Result<Outcome> {
    let mcfg = shipped_config("toy_mcmc.toml");
    if mcfg.toy_data()? != base.cfg.toy_data()? {
        return Ok(Outcome::new(false, "MCMC and SMC configs generate different data"));
    }
    let mproblem = mcfg.build_problem("acceptance-mcmc")?;
    let m = mcfg.mcmc.clone().expect("mcmc section");
    let start = Instant::now();
    let chain = run_mcmc_target(&mproblem, &m.start, &m.scales, m.iterations, mcfg.master_seed)?;
    let mcmc_secs = start.elapsed().as_secs_f64();
    let mcmc_cols = natural_columns(&mproblem, chain.after_burn_in(BURN_IN));
    let smc_cols = natural_columns(&base.problem, &swarm_rows(&base.result));

    let mut pass = true;
    let mut parts = Vec::new();
    for (j, name) in base.problem.space().names().iter().enumerate() {
        let c = compare_marginal(&mcmc_cols[j], &smc_cols[j], base.settings.bins)?;
        let smc_mean = mean(&smc_cols[j]);
        let mcmc_mean = mean(&mcmc_cols[j]);
        let in_band = (smc_mean - TABLE_ESTIMATES[j]).abs() <= SANITY_BAND
            && (mcmc_mean - TABLE_ESTIMATES[j]).abs() <= SANITY_BAND;
        let ok = c.mean_gap < MEAN_GAP && c.max_interval_gap() < INTERVAL_GAP && c.ks < KS_MAX && in_band;
        pass &= ok;
        parts.push(format!(
            "{name}: mean smc {smc_mean:.3} / mcmc {mcmc_mean:.3} (gap {:.4}), interval gap {:.4}, KS {:.4}{}",
            c.mean_gap,
            c.max_interval_gap(),
            c.ks,
            if in_band { "" } else { " OUTSIDE published band" }
        ));
    }
    Ok(Outcome::new(
        pass,
        format!(
            "{}; MCMC acceptance {:.3} ({mcmc_secs:.0} s), SMC N={} ({:.0} s)",
            parts.join("; "),
            chain.acceptance_rate(),
            base.settings.particles,
            base.seconds
        ),
    ))
}

struct ScheduleRun {
    seed: u64,
    result: CalibrationResult,
}

fn criterion_2(base: &ToyBaseline, runs: &mut Vec<ScheduleRun>) -> Result<Outcome> {
    let exec = Executor::new(1)?;
    runs.push(ScheduleRun {
        seed: base.settings.master_seed,
        result: base.result.clone(),
    });
    for i in 1..SCHEDULE_SEEDS {
        let settings = SmcSettings {
            master_seed: base.settings.master_seed + i,
            ..base.settings.clone()
        };
        let result = run_smc(&base.problem, &settings, &exec, |_| Ok(()))?;
        runs.push(ScheduleRun {
            seed: settings.master_seed,
            result,
        });
    }
    let mut pass = true;
    let mut counts = Vec::new();
    let mut first = Vec::new();
    for run in runs.iter() {
        let r = &run.result;
        let exact = r.temper.cumulative == 1.0;
        let sum: f64 = r.temper.increments.iter().sum();
        let prior_ll: Vec<f64> = r.snapshots[0].particles.iter().map(|p| p.log_lik).collect();
        let ess_min = ess_for_increment(&prior_ll, base.settings.gamma_min)?;
        let clamped = ess_min >= base.settings.ess_thresh
            || r.temper.increments[0] == base.settings.gamma_min;
        let n = r.cycle_count();
        let in_range = (CYCLE_RANGE.0..=CYCLE_RANGE.1).contains(&n);
        if !(exact && (sum - 1.0).abs() < 1e-12 && clamped && in_range) {
            pass = false;
            println!(
                "  seed {}: cumulative {} sum {sum} gamma_1 {} ESS(gamma_min) {ess_min:.1} cycles {n}",
                run.seed, r.temper.cumulative, r.temper.increments[0]
            );
        }
        counts.push(n);
        first.push(format!("{ess_min:.1}"));
    }
    let g = &runs[0].result.temper.increments;
    Ok(Outcome::new(
        pass,
        format!(
            "cycles per seed {counts:?}; ESS at gamma_min per seed [{}] vs threshold {}; baseline schedule {:?}",
            first.join(", "),
            base.settings.ess_thresh,
            g.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    ))
}

fn criterion_3(base: &ToyBaseline, runs: &[ScheduleRun]) -> Result<Outcome> {
    let mcmc_iterations = shipped_config("toy_mcmc.toml").mcmc.expect("mcmc section").iterations;
    let max_updates = base.settings.max_updates;
    let mut pass = true;
    let mut depths = Vec::new();
    for run in runs {
        let r = &run.result;
        let depth = r.counters.sequential_updates;
        let per_cycle: u64 = r.cycles.iter().map(|c| c.updates).sum();
        let bound = r.cycle_count() as u64 * max_updates;
        let ok = depth == per_cycle
            && depth <= bound
            && r.cycles.iter().all(|c| c.updates <= max_updates)
            && depth < MAX_SEQUENTIAL_DEPTH
            && depth < mcmc_iterations;
        pass &= ok;
        depths.push(depth);
    }
    Ok(Outcome::new(
        pass,
        format!(
            "sequential model runs per particle {depths:?} (bound cycles x {max_updates}, limit {MAX_SEQUENTIAL_DEPTH}) vs {mcmc_iterations} for MCMC; baseline total evaluations {}",
            base.result.counters.model_evaluations
        ),
    ))
}

fn criterion_4() -> Result<Outcome> {
    let config = repo_root().join("configs/toy_smc.toml");
    let run = || -> Result<f64> {
        let out = Command::new(env!("CARGO_BIN_EXE_smc-calibrate"))
            .args(["calibrate-threshold", "--config"])
            .arg(&config)
            .args(["--samples", "1000", "--bins", "200", "--quantile", "0.975", "--seed", "42"])
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| Error::io(&config, e))?;
        if !out.status.success() {
            return Err(Error::Config(String::from_utf8_lossy(&out.stderr).into_owned()));
        }
        let v: serde_json::Value = serde_json::from_slice(&out.stdout)
            .map_err(|e| Error::Config(format!("bad output: {e}")))?;
        v["epsilon"]
            .as_f64()
            .ok_or_else(|| Error::Config("no epsilon in output".into()))
    };
    let a = run()?;
    let b = run()?;
    let hand = bhattacharyya(&[0.0, 1.0], &[0.0, 0.0], 2)?;
    let expected = -(0.5f64.sqrt()).ln();
    let pass = a > 0.0 && format!("{a:.3}") == format!("{b:.3}") && (hand - expected).abs() <= HAND_CASE_TOL;
    Ok(Outcome::new(
        pass,
        format!(
            "threshold {a:.6} then {b:.6}; hand case {hand:.15} vs {expected:.15}"
        ),
    ))
}

/// Dense Gaussian log density through an LU decomposition and an explicit
/// inverse.
fn dense_gp(locs: &[[f64; 2]], res: &[f64], cov: &GpCovariance) -> f64 {
    let n = locs.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = (locs[i][0] - locs[j][0]).hypot(locs[i][1] - locs[j][1]);
        cov.variance * (-d / cov.range).exp() + if i == j { cov.noise } else { 0.0 }
    });
    let lu = k.clone().lu();
    let log_det: f64 = lu.u().diagonal().iter().map(|u| u.abs().ln()).sum();
    let inv = k.try_inverse().expect("invertible");
    let r = DVector::from_column_slice(res);
    let quad = (r.transpose() * inv * &r)[(0, 0)];
    -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// Normalized weights and ESS from scratch, with compensated sums.
fn weight_oracle(ll: &[f64], gamma: f64) -> (Vec<f64>, f64) {
    let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = ll.iter().map(|l| (gamma * (l - max)).exp()).collect();
    let s1 = compensated_sum(raw.iter().copied());
    let s2 = compensated_sum(raw.iter().map(|w| w * w));
    (raw.iter().map(|w| w / s1).collect(), s1 * s1 / s2)
}

/// Grid version of the increment rule: the largest grid exponent whose
/// ESS stays at or above the threshold, with the same endpoint clamps.
fn grid_increment(ll: &[f64], cumulative: f64, gamma_min: f64, thresh: f64) -> Result<f64> {
    let remainder = 1.0 - cumulative;
    if remainder <= gamma_min || ess_for_increment(ll, remainder)? >= thresh {
        return Ok(remainder);
    }
    if ess_for_increment(ll, gamma_min)? < thresh {
        return Ok(gamma_min);
    }
    let mut best = gamma_min;
    for i in 0..GRID_POINTS {
        let g = (gamma_min + (remainder - gamma_min) * i as f64 / (GRID_POINTS - 1) as f64).min(remainder);
        if ess_for_increment(ll, g)? >= thresh {
            best = g;
        }
    }
    Ok(best)
}

fn chi2_pvalue(counts: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = counts
        .iter()
        .zip(expected)
        .map(|(&c, &e)| (c as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("df > 0");
    1.0 - dist.cdf(stat)
}

fn criterion_5() -> Result<Outcome> {
    let mut rng = ChaCha12Rng::seed_from_u64(505);

    // (i) GP likelihood against dense linear algebra
    let mut gp_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let locs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let res: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let cov = GpCovariance {
            range: rng.random_range(0.05..2.0),
            variance: rng.random_range(0.1..3.0),
            noise: rng.random_range(0.01..1.0),
        };
        let got = GpDiscrepancy::new(locs.clone())?.log_likelihood(&res, &cov)?;
        let want = dense_gp(&locs, &res, &cov);
        gp_worst = gp_worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    let gp_ok = gp_worst <= GP_REL_TOL;

    // (ii) reweighting and ESS against compensated direct sums
    let mut ess_worst = 0.0f64;
    let mut w_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=2000);
        let spread = 10f64.powf(rng.random_range(-2.0..3.0));
        let ll: Vec<f64> = (0..n).map(|_| -spread * rng.random::<f64>()).collect();
        let gamma = rng.random_range(0.0..=1.0);
        let (w_ref, ess_ref) = weight_oracle(&ll, gamma);
        let w = importance_reweight(&ll, gamma)?;
        for (a, b) in w.iter().zip(&w_ref) {
            if *b > 1e-300 {
                w_worst = w_worst.max((a - b).abs() / b);
            }
        }
        for ess in [effective_sample_size(&w)?, ess_for_increment(&ll, gamma)?] {
            ess_worst = ess_worst.max((ess - ess_ref).abs() / ess_ref);
        }
    }
    let ess_ok = ess_worst <= ESS_REL_TOL && w_worst <= ESS_REL_TOL;

    // (iii) multinomial resampling goodness of fit
    let mut pvalues = Vec::new();
    for weights in [vec![0.1; 10], vec![0.05, 0.05, 0.1, 0.1, 0.2, 0.5]] {
        let n = weights.len();
        let mut counts = vec![0u64; n];
        let trials = 10_000;
        for _ in 0..trials {
            for i in multinomial_resample(&weights, n, &mut rng)? {
                counts[i] += 1;
            }
        }
        let expected: Vec<f64> = weights.iter().map(|w| w * (n * trials) as f64).collect();
        pvalues.push(chi2_pvalue(&counts, &expected));
    }
    let chi_ok = pvalues.iter().all(|&p| p > CHI2_LEVEL);

    // (iv) increment selection against a grid search
    let mut grid_worst = 0.0f64;
    let mut interior = 0;
    for _ in 0..100 {
        let n = rng.random_range(20..=400);
        let scale = 10f64.powf(rng.random_range(-0.5..2.5));
        let ll: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let cumulative = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.8) };
        let gamma_min = rng.random_range(0.01..0.2);
        let thresh = n as f64 * rng.random_range(0.2..0.8);
        let got = select_increment(&ll, cumulative, gamma_min, thresh)?;
        let want = grid_increment(&ll, cumulative, gamma_min, thresh)?;
        if got > gamma_min && got < 1.0 - cumulative {
            interior += 1;
        }
        grid_worst = grid_worst.max((got - want).abs());
    }
    let grid_ok = grid_worst <= GRID_TOL;

    Ok(Outcome::new(
        gp_ok && ess_ok && chi_ok && grid_ok,
        format!(
            "(i) GP worst relative error {gp_worst:.2e}; (ii) ESS {ess_worst:.2e}, weights {w_worst:.2e}; \
             (iii) chi-square p-values {:?}; (iv) grid worst gap {grid_worst:.2e} ({interior}/100 interior roots)",
            pvalues.iter().map(|p| (p * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    ))
}

fn criterion_6() -> Result<Outcome> {
    let mut rng = ChaCha12Rng::seed_from_u64(606);
    let chain = run_mcmc(
        smc_calibrate::mcmc::ChainState::new(vec![0.0], 0.0, ()),
        |x: &[f64], _| Ok((-0.5 * x[0] * x[0], ())),
        RW_STEPS,
        &[RW_SCALE],
        &mut rng,
    )?;
    let xs = chain.marginal(0, 0.0);
    let (m, v, acc) = (mean(&xs), variance(&xs), chain.acceptance_rate());
    let rw_ok = (acc - ACCEPTANCE.0).abs() <= ACCEPTANCE.1 && m.abs() <= MEAN_TOL && (v - 1.0).abs() <= VAR_TOL;

    // Three states, uniform proposal over the other two.
    let pi: [f64; 3] = [0.2, 0.3, 0.5];
    let mut kernel = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                kernel[i][j] = 0.5 * (pi[j] / pi[i]).min(1.0);
            }
        }
        kernel[i][i] = 1.0 - kernel[i].iter().sum::<f64>();
    }
    let mut counts = [[0u64; 3]; 3];
    let mut state = 0usize;
    for _ in 0..DISCRETE_STEPS {
        let offset = if rng.random_bool(0.5) { 1 } else { 2 };
        let proposal = (state + offset) % 3;
        let next = if accept_move(pi[state].ln(), pi[proposal].ln(), &mut rng) { proposal } else { state };
        counts[state][next] += 1;
        state = next;
    }
    let mut worst_sigma = 0.0f64;
    for i in 0..3 {
        let total: u64 = counts[i].iter().sum();
        for j in 0..3 {
            let p = kernel[i][j];
            let sd = (p * (1.0 - p) / total as f64).sqrt();
            let dev = (counts[i][j] as f64 / total as f64 - p).abs();
            worst_sigma = worst_sigma.max(if sd > 0.0 { dev / sd } else if dev == 0.0 { 0.0 } else { f64::INFINITY });
        }
    }
    // Detailed-balance flows pi_i K_ij vs pi_j K_ji, empirically.
    let n = DISCRETE_STEPS as f64;
    let mut flow_sigma = 0.0f64;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let expected = pi[i] * kernel[i][j];
            let sd = (2.0 * expected / n).sqrt();
            let gap = (counts[i][j] as f64 - counts[j][i] as f64).abs() / n;
            flow_sigma = flow_sigma.max(gap / sd);
        }
    }
    let db_ok = worst_sigma <= 3.0 && flow_sigma <= 3.0;
    Ok(Outcome::new(
        rw_ok && db_ok,
        format!(
            "acceptance {acc:.4}, mean {m:.4}, variance {v:.4}; 3-state kernel worst deviation {worst_sigma:.2} sigma, flow asymmetry {flow_sigma:.2} sigma"
        ),
    ))
}

fn criterion_7(base: &ToyBaseline) -> Result<Outcome> {
    let eight = run_smc(&base.problem, &base.settings, &Executor::new(8)?, |_| Ok(()))?;
    let workers_ok = eight.outcome_eq(&base.result);

    let dir = tempfile::tempdir().map_err(|e| Error::io(std::path::Path::new("tempdir"), e))?;
    let space = base.problem.space().clone();
    let seed = base.settings.master_seed;
    let exec = Executor::new(1)?;
    let interrupted = run_smc(&base.problem, &base.settings, &exec, |state| {
        snapshot::write_cycle_snapshot(dir.path(), &space, state, seed)?;
        if state.cycle == RESUME_AFTER {
            return Err(Error::Config("interrupted".into()));
        }
        Ok(())
    });
    let stopped = matches!(interrupted, Err(Error::Config(ref m)) if m == "interrupted");
    let state = snapshot::load_state(dir.path(), &space, seed)?;
    let resumed_from = state.cycle;
    let resumed = run_smc_from(&base.problem, &base.settings, &exec, state, |_| Ok(()))?;
    let resume_ok = stopped && resumed_from == RESUME_AFTER && resumed.outcome_eq(&base.result);

    let items: Vec<usize> = (0..SLEEP_ITEMS).collect();
    let sleep = |_: usize, i: &usize| -> Result<usize> {
        std::thread::sleep(SLEEP);
        Ok(*i)
    };
    let t = Instant::now();
    let serial = parallel_map(&items, 1, sleep)?;
    let t1 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let four = parallel_map(&items, 4, sleep)?;
    let t4 = t.elapsed().as_secs_f64();
    let limit = SLEEP_ITEMS as f64 * SLEEP.as_secs_f64() / SPEEDUP_MIN;
    let speed_ok = serial == items && four == items && t4 < limit && t1 / t4 >= SPEEDUP_MIN;

    Ok(Outcome::new(
        workers_ok && resume_ok && speed_ok,
        format!(
            "1 vs 8 workers bit-identical: {workers_ok}; resume after cycle {resumed_from} identical: {resume_ok}; \
             sleep load {t1:.2} s serial vs {t4:.2} s on 4 workers (speedup {:.2}, limit {limit:.2} s)",
            t1 / t4
        ),
    ))
}

fn criterion_8() -> Result<Outcome> {
    let mut marginals = Vec::new();
    let mut names = Vec::new();
    let mut parts = Vec::new();
    let mut pass = true;
    for preset in ["narrow", "wide"] {
        let cfg = shipped_config(&format!("psu3dice_{preset}.toml"));
        let problem = cfg.build_problem("acceptance")?;
        let settings = cfg.smc_settings()?;
        let result = run_smc(&problem, &settings, &Executor::new(1)?, |_| Ok(()))?;
        let obs = match cfg.likelihood_config() {
            LikelihoodConfig::Composite { indicator, .. } => indicator.unwrap_or_default(),
            _ => IndicatorTerm::default(),
        };
        let space = problem.space();
        let mismatch = |rows: &[smc_calibrate::smc::Particle]| -> Result<f64> {
            let mut bad = 0usize;
            for p in rows {
                let out = synthetic_multi_era_eval(space, &p.theta)?;
                if out.bits != obs.obs_bits {
                    bad += 1;
                }
            }
            Ok(bad as f64 / rows.len() as f64)
        };
        let prior_mismatch = mismatch(&result.snapshots[0].particles)?;
        let post_mismatch = mismatch(&result.final_swarm)?;
        let finite = result.final_swarm.iter().all(|p| p.log_lik.is_finite());
        pass &= result.temper.cumulative == 1.0 && finite && post_mismatch == 0.0;
        parts.push(format!(
            "{preset}: {} cycles, mismatching bits in {:.1}% of prior draws and {:.1}% of posterior",
            result.cycle_count(),
            100.0 * prior_mismatch,
            100.0 * post_mismatch
        ));
        marginals.push(natural_columns(&problem, &swarm_rows(&result)));
        names = space.names();
    }
    let mut best = (0.0f64, String::new());
    for (j, name) in names.iter().enumerate() {
        let ks = ks_sorted(&sorted(&marginals[0][j])?, &sorted(&marginals[1][j])?);
        if ks > best.0 {
            best = (ks, name.clone());
        }
    }
    pass &= best.0 > PRESET_KS_MIN;
    // Sanity: summaries of the most different marginal.
    let j = names.iter().position(|n| *n == best.1).unwrap_or(0);
    let (a, b) = (summarize(&marginals[0][j], &DEFAULT_LEVELS)?, summarize(&marginals[1][j], &DEFAULT_LEVELS)?);
    Ok(Outcome::new(
        pass,
        format!(
            "{}; largest narrow-vs-wide KS {:.3} on {} (posterior means {:.4} vs {:.4})",
            parts.join("; "),
            best.0,
            best.1,
            a.mean,
            b.mean
        ),
    ))
}

/// Criterion numbers given as arguments restrict the run to those
/// criteria; no numbers runs all of them.
fn selected() -> Vec<u8> {
    let picked: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() {
        (1..=8).collect()
    } else {
        picked
    }
}

fn main() {
    let want = selected();
    let needs_toy = want.iter().any(|n| matches!(n, 1 | 2 | 3 | 7));
    let base = if needs_toy { Some(toy_baseline()) } else { None };
    let mut runs = Vec::new();
    let mut all = true;
    for n in want {
        let with_base = |f: &mut dyn FnMut(&ToyBaseline) -> Result<Outcome>| match base.as_ref() {
            Some(Ok(b)) => f(b),
            Some(Err(e)) => Err(Error::Config(format!("toy baseline run failed: {e}"))),
            None => unreachable!("baseline requested"),
        };
        all &= match n {
            1 => report(1, "toy problem: SMC agrees with the MCMC oracle", with_base(&mut |b| criterion_1(b))),
            2 => report(2, "adaptive schedule behaviour", with_base(&mut |b| criterion_2(b, &mut runs))),
            3 => {
                if runs.is_empty() {
                    if let Some(Ok(b)) = base.as_ref() {
                        runs.push(ScheduleRun { seed: b.settings.master_seed, result: b.result.clone() });
                    }
                }
                report(3, "sequential-evaluation economy", with_base(&mut |b| criterion_3(b, &runs)))
            }
            4 => report(4, "stopping-threshold calibration", criterion_4()),
            5 => report(5, "component oracles", criterion_5()),
            6 => report(6, "MCMC kernel correctness", criterion_6()),
            7 => report(7, "determinism and parallel contract", with_base(&mut |b| criterion_7(b))),
            8 => report(8, "11-parameter synthetic pipeline", criterion_8()),
            other => {
                println!("no criterion {other}");
                false
            }
        };
    }
    if all {
        println!("acceptance: all criteria PASS");
    } else {
        println!("acceptance: at least one criterion FAILED");
        std::process::exit(1);
    }
}
