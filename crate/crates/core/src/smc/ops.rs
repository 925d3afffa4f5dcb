//! The serial building blocks of a tempering cycle.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::parallel::{derive_stream, Stage, StreamKey};
use crate::stats;

/// Bisection tolerance on the tempering increment.
pub const GAMMA_TOLERANCE: f64 = 1e-6;

/// `1 / sum(w_i^2)` for normalized weights, computed as
/// `(sum w)^2 / sum(w^2)` so that unnormalized input gives the same value.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Contract("weights must be finite and non-negative".into()));
    }
    let s: f64 = weights.iter().sum();
    if s == 0.0 {
        return Err(Error::Contract("all weights are zero".into()));
    }
    let s2: f64 = weights.iter().map(|w| (w / s) * (w / s)).sum();
    Ok(1.0 / s2)
}

/// Normalized weights proportional to `exp(gamma * log_lik)`, stabilized by
/// subtracting the largest finite log-likelihood. `gamma = 0` gives uniform
/// weights, whatever the likelihoods.
pub fn importance_reweight(log_liks: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if log_liks.is_empty() {
        return Err(Error::Contract("cannot reweight an empty swarm".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("increment {gamma} outside [0, 1]")));
    }
    if log_liks.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Contract("log-likelihoods must be finite or -inf".into()));
    }
    let n = log_liks.len();
    if gamma == 0.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let max = log_liks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateSwarm(
            "every particle has zero likelihood".into(),
        ));
    }
    let raw: Vec<f64> = log_liks.iter().map(|l| (gamma * (l - max)).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateSwarm(format!(
            "total importance weight is {total}"
        )));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// ESS of the weights `exp(gamma * (l - max))` over `finite` log-likelihoods
/// offset by their maximum; particles at `-inf` contribute zero weight.
fn ess_at(shifted: &[f64], gamma: f64) -> f64 {
    let (mut s, mut s2) = (0.0, 0.0);
    for &l in shifted {
        let w = (gamma * l).exp();
        s += w;
        s2 += w * w;
    }
    s * s / s2
}

/// ESS as a function of the increment, for the grid oracle and diagnostics.
pub fn ess_for_increment(log_liks: &[f64], gamma: f64) -> Result<f64> {
    effective_sample_size(&importance_reweight(log_liks, gamma)?)
}

/// Chooses the next tempering increment: the `gamma` in
/// `[gamma_min, 1 - cumulative]` whose reweighted ESS is closest to
/// `ess_thresh`.
///
/// The whole remainder is taken when it already keeps the ESS at or above
/// the threshold (or is no larger than `gamma_min`); `gamma_min` is taken
/// when even that drops the ESS below the threshold.
pub fn select_increment(
    log_liks: &[f64],
    cumulative: f64,
    gamma_min: f64,
    ess_thresh: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&cumulative) {
        return Err(Error::Contract(format!(
            "cumulative exponent {cumulative} leaves nothing to incorporate"
        )));
    }
    if !(gamma_min > 0.0 && gamma_min < 1.0) {
        return Err(Error::Contract(format!("gamma_min {gamma_min} outside (0, 1)")));
    }
    if log_liks.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Contract("log-likelihoods must be finite or -inf".into()));
    }
    let finite = log_liks.iter().filter(|l| l.is_finite()).count();
    if finite < 2 {
        let failed = log_liks.len() - finite;
        return Err(Error::DegenerateSwarm(format!(
            "{finite} of {} particles have non-zero likelihood ({:.1}% at zero likelihood); \
             at least 2 are needed to continue",
            log_liks.len(),
            100.0 * failed as f64 / log_liks.len() as f64
        )));
    }
    let remainder = 1.0 - cumulative;
    if remainder <= gamma_min {
        return Ok(remainder);
    }
    let max = log_liks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = log_liks
        .iter()
        .filter(|l| l.is_finite())
        .map(|l| l - max)
        .collect();
    if ess_at(&shifted, remainder) >= ess_thresh {
        return Ok(remainder);
    }
    if ess_at(&shifted, gamma_min) < ess_thresh {
        return Ok(gamma_min);
    }
    // ESS(lo) >= thresh > ESS(hi)
    let (mut lo, mut hi) = (gamma_min, remainder);
    while hi - lo > GAMMA_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if ess_at(&shifted, mid) >= ess_thresh {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gap = |g: f64| (ess_at(&shifted, g) - ess_thresh).powi(2);
    Ok(if gap(hi) < gap(lo) { hi } else { lo })
}

/// `n` categorical draws from `weights` (normalized or not), as particle
/// indices.
pub fn multinomial_resample<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Contract("weights must be finite and non-negative".into()));
    }
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cumulative.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Contract("all weights are zero".into()));
    }
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cumulative
                .partition_point(|&c| c <= u)
                .min(last_positive)
        })
        .collect())
}

/// Bhattacharyya distance `-ln sum_i sqrt(p_i q_i)` between the histograms
/// of `a` and `b` on `m` equal-width bins spanning both samples (the last
/// bin is closed). Non-finite values are ignored.
pub fn bhattacharyya(a: &[f64], b: &[f64], m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::Contract(format!("need at least 2 bins, got {m}")));
    }
    let a: Vec<f64> = a.iter().copied().filter(|x| x.is_finite()).collect();
    let b: Vec<f64> = b.iter().copied().filter(|x| x.is_finite()).collect();
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("Bhattacharyya distance of an empty sample".into()));
    }
    let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(0.0);
    }
    let width = (hi - lo) / m as f64;
    let counts = |xs: &[f64]| {
        let mut h = vec![0u64; m];
        for &x in xs {
            let k = (((x - lo) / width).floor() as usize).min(m - 1);
            h[k] += 1;
        }
        h
    };
    // Integer counts keep identical histograms at exactly zero distance.
    let (p, q) = (counts(&a), counts(&b));
    let overlap: f64 = p
        .iter()
        .zip(&q)
        .map(|(&p, &q)| ((p * q) as f64).sqrt())
        .sum();
    let bc = overlap / ((a.len() as f64) * (b.len() as f64)).sqrt();
    if bc == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((-bc.ln()).max(0.0))
}

/// Settings for the Monte-Carlo calibration of the stopping threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec {
    /// Number of simulated sample sets.
    pub samples: usize,
    /// Size of each set.
    pub n: usize,
    pub bins: usize,
    pub quantile: f64,
}

/// Fits a normal to `survey`, draws `spec.samples` sets of size `spec.n`
/// plus one baseline set, and returns the `spec.quantile` quantile of the
/// Bhattacharyya distances to the baseline. Set `b` uses the stream
/// `(seed, threshold_calibration, particle b)`; the baseline uses
/// `b = spec.samples`.
pub fn calibrate_stop_threshold(survey: &[f64], spec: &ThresholdSpec, master_seed: u64) -> Result<f64> {
    if survey.len() < 30 {
        return Err(Error::Config(format!(
            "threshold survey needs at least 30 values, got {}",
            survey.len()
        )));
    }
    if survey.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("threshold survey contains non-finite values".into()));
    }
    if spec.samples == 0 || spec.n == 0 {
        return Err(Error::Config("threshold calibration needs B >= 1 and n >= 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.quantile) {
        return Err(Error::Config(format!("quantile {} outside [0, 1]", spec.quantile)));
    }
    let mu = stats::mean(survey);
    let var = stats::variance(survey);
    if !(var > 0.0) {
        return Err(Error::Config("threshold survey has zero variance".into()));
    }
    let normal = Normal::new(mu, var.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let draw = |b: usize| -> Vec<f64> {
        let key = StreamKey::new(master_seed, Stage::ThresholdCalibration).particle(b as u64);
        let mut rng = derive_stream(&key);
        (0..spec.n).map(|_| normal.sample(&mut rng)).collect()
    };
    let baseline = draw(spec.samples);
    let mut distances = Vec::with_capacity(spec.samples);
    for b in 0..spec.samples {
        distances.push(bhattacharyya(&draw(b), &baseline, spec.bins)?);
    }
    let sorted = stats::sorted(&distances)?;
    Ok(stats::quantile_sorted(&sorted, spec.quantile))
}
