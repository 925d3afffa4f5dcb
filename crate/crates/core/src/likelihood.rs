//! Log-likelihoods: truncated-normal and indicator composites for scalar
//! records, and the Gaussian-process discrepancy marginal likelihood for
//! spatial fields.

use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};
use crate::forward_model::ModelOutput;
use crate::linalg;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability mass of the standard normal on `[a, b]`, evaluated on the
/// side of zero that avoids cancellation.
fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// Log density of `N(mu, sd^2)` truncated to `[lower, upper]`.
pub fn log_trunc_normal(z: f64, mu: f64, sd: f64, lower: f64, upper: f64) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(Error::Config(format!("truncated normal needs sd > 0, got {sd}")));
    }
    if !(lower < upper) {
        return Err(Error::Config(format!(
            "truncated normal needs lower < upper, got [{lower}, {upper}]"
        )));
    }
    if !(z >= lower && z <= upper) {
        return Ok(f64::NEG_INFINITY);
    }
    let x = (z - mu) / sd;
    let mass = std_normal_mass((lower - mu) / sd, (upper - mu) / sd);
    Ok(-0.5 * x * x - LN_SQRT_2PI - sd.ln() - mass.ln())
}

/// One scalar record with a model-centered truncation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncNormalTerm {
    /// Name of the model scalar this record constrains.
    pub output: String,
    pub obs: f64,
    pub sd: f64,
    pub half_width: f64,
}

impl TruncNormalTerm {
    pub fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0) || !self.sd.is_finite() {
            return Err(Error::Config(format!("term `{}`: sd must be > 0", self.output)));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::Config(format!(
                "term `{}`: half_width must be > 0",
                self.output
            )));
        }
        if !self.obs.is_finite() {
            return Err(Error::Config(format!("term `{}`: obs must be finite", self.output)));
        }
        Ok(())
    }

    /// Log density of the record given model value `mu`, truncated to
    /// `mu +/- half_width`.
    pub fn log_density(&self, mu: f64) -> Result<f64> {
        log_trunc_normal(
            self.obs,
            mu,
            self.sd,
            mu - self.half_width,
            mu + self.half_width,
        )
    }
}

/// Number of spatial presence sites.
pub const INDICATOR_SITES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorTerm {
    pub obs_bits: Vec<u8>,
    #[serde(default = "default_location_ids")]
    pub location_ids: Vec<String>,
}

fn default_location_ids() -> Vec<String> {
    (1..=INDICATOR_SITES).map(|i| format!("site{i}")).collect()
}

impl Default for IndicatorTerm {
    fn default() -> Self {
        Self {
            obs_bits: vec![1; INDICATOR_SITES],
            location_ids: default_location_ids(),
        }
    }
}

impl IndicatorTerm {
    pub fn validate(&self) -> Result<()> {
        if self.obs_bits.len() != INDICATOR_SITES || self.location_ids.len() != INDICATOR_SITES {
            return Err(Error::Config(format!(
                "indicator term needs exactly {INDICATOR_SITES} bits and location ids"
            )));
        }
        if self.obs_bits.iter().any(|&b| b > 1) {
            return Err(Error::Config("indicator bits must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Independent truncated-normal records plus an all-or-nothing match on
/// spatial presence bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeLikelihood {
    #[serde(default = "default_terms")]
    pub terms: Vec<TruncNormalTerm>,
    #[serde(default)]
    pub indicator: Option<IndicatorTerm>,
}

/// Default records: Pliocene, Last Interglacial and Last Glacial Maximum sea
/// level contributions [m], modern volume [km^3] and grounded area [km^2].
/// Observations sit at the centers of the published ranges; the volume and
/// area observations are Bedmap2-scale values.
pub fn default_terms() -> Vec<TruncNormalTerm> {
    let term = |output: &str, obs: f64, sd: f64, half_width: f64| TruncNormalTerm {
        output: output.into(),
        obs,
        sd,
        half_width,
    };
    vec![
        term("sle_plio", 15.0, 30.0, 10.0),
        term("sle_lig", 5.5, 10.0, 2.0),
        term("sle_lgm", -10.0, 20.0, 5.0),
        term("volume", 26.5e6, 1.6e15f64.sqrt(), 2.5e15),
        term("grounded_area", 12.3e6, 0.6e12f64.sqrt(), 1.5e12),
    ]
}

impl Default for CompositeLikelihood {
    fn default() -> Self {
        Self {
            terms: default_terms(),
            indicator: Some(IndicatorTerm::default()),
        }
    }
}

impl CompositeLikelihood {
    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            t.validate()?;
        }
        if let Some(ind) = &self.indicator {
            ind.validate()?;
        }
        Ok(())
    }

    pub fn log_likelihood(&self, output: &ModelOutput) -> Result<f64> {
        let mut total = 0.0;
        for term in &self.terms {
            let mu = *output.scalars.get(&term.output).ok_or_else(|| {
                Error::Contract(format!("model output lacks scalar `{}`", term.output))
            })?;
            total += term.log_density(mu)?;
        }
        if let Some(ind) = &self.indicator {
            if output.bits.len() != ind.obs_bits.len() {
                return Err(Error::Contract(format!(
                    "model produced {} spatial bits, expected {}",
                    output.bits.len(),
                    ind.obs_bits.len()
                )));
            }
            if output.bits != ind.obs_bits {
                return Ok(f64::NEG_INFINITY);
            }
        }
        Ok(total)
    }
}

/// Covariance parameters of the discrepancy-plus-noise process:
/// `variance * exp(-|s_i - s_j| / range) + noise * 1{i == j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpCovariance {
    pub range: f64,
    pub variance: f64,
    pub noise: f64,
}

impl GpCovariance {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.range) && ok(self.variance) && ok(self.noise)) {
            return Err(Error::Contract(format!(
                "GP covariance parameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A fixed set of spatial locations with cached pairwise distances.
#[derive(Debug, Clone)]
pub struct GpDiscrepancy {
    locations: Vec<[f64; 2]>,
    distances: Vec<f64>,
}

impl GpDiscrepancy {
    pub fn new(locations: Vec<[f64; 2]>) -> Result<Self> {
        let n = locations.len();
        if n == 0 {
            return Err(Error::Config("GP discrepancy needs at least one location".into()));
        }
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let dx = locations[i][0] - locations[j][0];
                let dy = locations[i][1] - locations[j][1];
                let d = dx.hypot(dy);
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }
        Ok(Self {
            locations,
            distances,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[[f64; 2]] {
        &self.locations
    }

    fn fill_lower(&self, cov: &GpCovariance, jitter: f64, out: &mut [f64]) {
        let n = self.len();
        let inv_range = 1.0 / cov.range;
        for i in 0..n {
            let row = &mut out[i * n..i * n + i + 1];
            let d = &self.distances[i * n..i * n + i + 1];
            for (o, &dij) in row.iter_mut().zip(d) {
                *o = cov.variance * (-dij * inv_range).exp();
            }
            row[i] += cov.noise + jitter;
        }
    }

    /// Log density of `residuals` under the zero-mean Gaussian with this
    /// covariance, via a Cholesky factorization. A failed factorization is
    /// retried once with `1e-10 * variance` added to the diagonal.
    pub fn log_likelihood(&self, residuals: &[f64], cov: &GpCovariance) -> Result<f64> {
        let n = self.len();
        if residuals.len() != n {
            return Err(Error::Contract(format!(
                "{} residuals for {n} locations",
                residuals.len()
            )));
        }
        cov.validate()?;
        let mut factor = vec![0.0; n * n];
        self.fill_lower(cov, 0.0, &mut factor);
        if linalg::cholesky_in_place(&mut factor, n).is_err() {
            self.fill_lower(cov, 1e-10 * cov.variance, &mut factor);
            if let Err(pivot) = linalg::cholesky_in_place(&mut factor, n) {
                return Err(Error::Numerical {
                    message: format!("GP covariance not positive definite at pivot {pivot}"),
                    params: vec![cov.range, cov.variance, cov.noise],
                });
            }
        }
        let mut white = residuals.to_vec();
        linalg::solve_lower_in_place(&factor, n, &mut white);
        let quad: f64 = white.iter().map(|w| w * w).sum();
        Ok(-0.5 * quad - linalg::half_log_det(&factor, n) - n as f64 * LN_SQRT_2PI)
    }
}

/// Locations plus covariance parameters: one fully specified GP.
#[derive(Debug, Clone)]
pub struct GpDiscrepancySpec {
    pub locations: Vec<[f64; 2]>,
    pub covariance: GpCovariance,
}

/// Marginal log-likelihood of `residuals` under discrepancy plus noise.
pub fn log_likelihood_gp(residuals: &[f64], spec: &GpDiscrepancySpec) -> Result<f64> {
    GpDiscrepancy::new(spec.locations.clone())?.log_likelihood(residuals, &spec.covariance)
}

/// Field observations explained by model field + GP discrepancy + noise; the
/// covariance parameters are calibrated alongside the model parameters and
/// are looked up by position in the natural-space parameter vector.
#[derive(Debug, Clone)]
pub struct GpFieldLikelihood {
    pub observations: Vec<f64>,
    pub gp: GpDiscrepancy,
    pub range_index: usize,
    pub variance_index: usize,
    pub noise_index: usize,
}

impl GpFieldLikelihood {
    pub fn log_likelihood(&self, natural: &[f64], output: &ModelOutput) -> Result<f64> {
        let field = output
            .field
            .as_ref()
            .ok_or_else(|| Error::Contract("model output lacks the spatial field".into()))?;
        if field.len() != self.observations.len() {
            return Err(Error::Contract(format!(
                "model field has {} values, data has {}",
                field.len(),
                self.observations.len()
            )));
        }
        let residuals: Vec<f64> = self
            .observations
            .iter()
            .zip(field)
            .map(|(z, y)| z - y)
            .collect();
        let cov = GpCovariance {
            range: natural[self.range_index],
            variance: natural[self.variance_index],
            noise: natural[self.noise_index],
        };
        self.gp.log_likelihood(&residuals, &cov)
    }
}

#[derive(Debug, Clone)]
pub enum Likelihood {
    Composite(CompositeLikelihood),
    GpField(GpFieldLikelihood),
}

impl Likelihood {
    pub fn log_likelihood(&self, natural: &[f64], output: &ModelOutput) -> Result<f64> {
        match self {
            Likelihood::Composite(c) => c.log_likelihood(output),
            Likelihood::GpField(g) => g.log_likelihood(natural, output),
        }
    }
}

/// `gamma * log_l`, with `L^0 = 1` even where `L = 0`.
pub fn tempered_log_weight(log_l: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("tempering exponent {gamma} outside [0, 1]")));
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma * log_l)
}
