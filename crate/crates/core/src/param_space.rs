//! Parameter space: priors, coordinate transforms and prior sampling.
//!
//! Samplers and proposals work in the *transformed* space. A log-uniform prior
//! `log_b(x) ~ U(lo, hi)` is stored as its exponent, so it is flat there;
//! [`ParamSpace::to_natural`] maps back to the values a forward model consumes.

use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::{erf, gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Uniform {
        lower: f64,
        upper: f64,
    },
    /// `log_base(x) ~ U(lower_exp, upper_exp)`.
    LogUniform {
        base: f64,
        lower_exp: f64,
        upper_exp: f64,
    },
    Normal {
        mean: f64,
        variance: f64,
    },
    InverseGamma {
        shape: f64,
        scale: f64,
    },
}

/// Map from the sampling coordinate to the natural (model) coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    LogBase(f64),
}

impl Transform {
    pub fn to_natural(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::LogBase(b) => b.powf(x),
        }
    }

    pub fn from_natural(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::LogBase(b) => y.ln() / b.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub prior: Prior,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, prior: Prior) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            prior,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::Config(format!("parameter `{}`: {why}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::Config("parameter with empty name".into()));
        }
        let all_finite = match self.prior {
            Prior::Uniform { lower, upper } => lower.is_finite() && upper.is_finite(),
            Prior::LogUniform {
                base,
                lower_exp,
                upper_exp,
            } => base.is_finite() && lower_exp.is_finite() && upper_exp.is_finite(),
            Prior::Normal { mean, variance } => mean.is_finite() && variance.is_finite(),
            Prior::InverseGamma { shape, scale } => shape.is_finite() && scale.is_finite(),
        };
        if !all_finite {
            return bad("prior parameters must be finite");
        }
        match self.prior {
            Prior::Uniform { lower, upper } if lower >= upper => {
                bad("uniform prior needs lower < upper")
            }
            Prior::LogUniform {
                lower_exp,
                upper_exp,
                ..
            } if lower_exp >= upper_exp => bad("log-uniform prior needs lower_exp < upper_exp"),
            Prior::LogUniform { base, .. } if base <= 0.0 || base == 1.0 => {
                bad("log-uniform base must be positive and different from 1")
            }
            Prior::Normal { variance, .. } if variance <= 0.0 => {
                bad("normal prior needs variance > 0")
            }
            Prior::InverseGamma { shape, scale } if shape <= 0.0 || scale <= 0.0 => {
                bad("inverse-gamma prior needs shape > 0 and scale > 0")
            }
            _ => Ok(()),
        }
    }

    pub fn transform(&self) -> Transform {
        match self.prior {
            Prior::LogUniform { base, .. } => Transform::LogBase(base),
            _ => Transform::Identity,
        }
    }

    /// Draws one value in the transformed coordinate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.prior {
            Prior::Uniform { lower, upper } => lower + (upper - lower) * rng.random::<f64>(),
            Prior::LogUniform {
                lower_exp,
                upper_exp,
                ..
            } => lower_exp + (upper_exp - lower_exp) * rng.random::<f64>(),
            Prior::Normal { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            Prior::InverseGamma { shape, scale } => {
                // 1/X with X ~ Gamma(shape, rate = scale)
                let g = Gamma::new(shape, 1.0 / scale).expect("validated gamma parameters");
                loop {
                    let x: f64 = g.sample(rng);
                    if x > 0.0 {
                        break 1.0 / x;
                    }
                }
            }
        }
    }

    /// Log density in the transformed coordinate; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NEG_INFINITY;
        }
        match self.prior {
            Prior::Uniform { lower, upper } => flat_log_density(x, lower, upper),
            Prior::LogUniform {
                lower_exp,
                upper_exp,
                ..
            } => flat_log_density(x, lower_exp, upper_exp),
            Prior::Normal { mean, variance } => {
                let z = (x - mean) / variance.sqrt();
                -0.5 * z * z - LN_SQRT_2PI - 0.5 * variance.ln()
            }
            Prior::InverseGamma { shape, scale } => {
                if x <= 0.0 || !x.is_finite() {
                    return f64::NEG_INFINITY;
                }
                shape * scale.ln() - gamma::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
        }
    }

    /// Prior CDF in the transformed coordinate.
    pub fn cdf(&self, x: f64) -> f64 {
        match self.prior {
            Prior::Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
            Prior::LogUniform {
                lower_exp,
                upper_exp,
                ..
            } => ((x - lower_exp) / (upper_exp - lower_exp)).clamp(0.0, 1.0),
            Prior::Normal { mean, variance } => {
                0.5 * erf::erfc(-(x - mean) / (variance.sqrt() * std::f64::consts::SQRT_2))
            }
            Prior::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    gamma::gamma_ur(shape, scale / x)
                }
            }
        }
    }

    /// Support in the transformed coordinate (closed where finite).
    pub fn support(&self) -> (f64, f64) {
        match self.prior {
            Prior::Uniform { lower, upper } => (lower, upper),
            Prior::LogUniform {
                lower_exp,
                upper_exp,
                ..
            } => (lower_exp, upper_exp),
            Prior::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Prior::InverseGamma { .. } => (0.0, f64::INFINITY),
        }
    }

    /// Support in the natural coordinate. Bases below one reverse ordering,
    /// so the mapped endpoints are sorted.
    pub fn natural_support(&self) -> (f64, f64) {
        let (lo, hi) = self.support();
        let t = self.transform();
        let (a, b) = (t.to_natural(lo), t.to_natural(hi));
        (a.min(b), a.max(b))
    }
}

fn flat_log_density(x: f64, lower: f64, upper: f64) -> f64 {
    if x >= lower && x <= upper {
        -(upper - lower).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// A point in the transformed parameter space. All coordinates are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "parameter coordinate {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    /// Callers guarantee finiteness.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// An ordered list of parameter specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    params: Vec<ParamSpec>,
}

#[derive(Deserialize)]
struct PresetFile {
    params: Vec<ParamSpec>,
}

/// Names of the bundled prior presets.
pub const PRESETS: [&str; 3] = ["psu3dice_narrow_priors", "psu3dice_wide_priors", "toy_priors"];

impl ParamSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("parameter space has no parameters".into()));
        }
        for (i, p) in params.iter().enumerate() {
            p.validate()?;
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate parameter `{}`", p.name)));
            }
        }
        Ok(Self { params })
    }

    /// Loads one of the bundled presets listed in [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "psu3dice_narrow_priors" => include_str!("../presets/psu3dice_narrow_priors.toml"),
            "psu3dice_wide_priors" => include_str!("../presets/psu3dice_wide_priors.toml"),
            "toy_priors" => include_str!("../presets/toy_priors.toml"),
            other => {
                return Err(Error::Config(format!(
                    "unknown prior preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let file: PresetFile = toml::from_str(text)
            .map_err(|e| Error::Config(format!("preset `{name}` is malformed: {e}")))?;
        Self::new(file.params)
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Contract(format!(
                "parameter vector has dimension {len}, space has {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Draws every coordinate independently from its prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        ParameterVector::from_vec_unchecked(self.params.iter().map(|p| p.sample(rng)).collect())
    }

    /// Sum of per-coordinate log densities in the transformed space.
    pub fn log_prior_density(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta.len())?;
        let mut total = 0.0;
        for (p, &x) in self.params.iter().zip(theta) {
            total += p.log_density(x);
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        Ok(total)
    }

    pub fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .zip(theta)
            .map(|(p, &x)| p.transform().to_natural(x))
            .collect()
    }

    pub fn from_natural(&self, natural: &[f64]) -> Result<ParameterVector> {
        self.check_dim(natural.len())?;
        ParameterVector::new(
            self.params
                .iter()
                .zip(natural)
                .map(|(p, &y)| p.transform().from_natural(y))
                .collect(),
        )
    }

    /// Per-coordinate prior CDF values, i.e. the normalized position of each
    /// coordinate within its prior.
    pub fn prior_positions(&self, theta: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .zip(theta)
            .map(|(p, &x)| p.cdf(x))
            .collect()
    }
}

/// Free-function form of [`ParamSpace::sample_prior`].
pub fn sample_prior<R: Rng + ?Sized>(space: &ParamSpace, rng: &mut R) -> ParameterVector {
    space.sample_prior(rng)
}

/// Free-function form of [`ParamSpace::log_prior_density`].
pub fn log_prior_density(space: &ParamSpace, theta: &[f64]) -> Result<f64> {
    space.log_prior_density(theta)
}
