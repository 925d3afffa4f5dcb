//! TOML run configuration.
//!
//! Relative paths in a configuration file are resolved against the file's
//! own directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::{
    toy_generate_data, ExternalModel, ExternalModelConfig, ForwardModel, SyntheticMultiEra,
    ToyData, ToyModel,
};
use crate::likelihood::{
    CompositeLikelihood, GpDiscrepancy, GpFieldLikelihood, IndicatorTerm, Likelihood,
    TruncNormalTerm,
};
use crate::mcmc::DEFAULT_BURN_IN_FRACTION;
use crate::param_space::{ParamSpace, ParamSpec};
use crate::problem::{FailurePolicy, Metric, Problem};
use crate::smc::SmcSettings;

/// Top-level keys without defaults.
pub const REQUIRED_FIELDS: [&str; 3] = ["master_seed", "model", "priors"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Smc,
    Mcmc,
    ThresholdCalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// The spatial toy problem. Data come from `data` (CSV with columns
    /// `lat,lon,z`) when given, otherwise they are simulated.
    Toy {
        #[serde(default = "default_toy_n")]
        n: usize,
        #[serde(default = "default_theta_true")]
        theta_true: f64,
        #[serde(default = "default_sigma2_eps")]
        sigma2_eps: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        data: Option<PathBuf>,
        #[serde(default = "default_theta_name")]
        theta_param: String,
        #[serde(default)]
        failure_policy: FailurePolicy,
    },
    SyntheticMultiEra {
        #[serde(default)]
        failure_policy: FailurePolicy,
    },
    External {
        #[serde(flatten)]
        client: ExternalModelConfig,
        #[serde(default)]
        failure_policy: FailurePolicy,
    },
}

fn default_toy_n() -> usize {
    300
}
fn default_theta_true() -> f64 {
    1.7
}
fn default_sigma2_eps() -> f64 {
    0.5
}
fn default_theta_name() -> String {
    "theta".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorConfig {
    Preset { preset: String },
    Inline { params: Vec<ParamSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LikelihoodConfig {
    /// Truncated-normal records and spatial indicators.
    Composite {
        #[serde(default = "crate::likelihood::default_terms")]
        terms: Vec<TruncNormalTerm>,
        #[serde(default = "default_indicator")]
        indicator: Option<IndicatorTerm>,
    },
    /// Field data with a GP discrepancy whose covariance parameters are
    /// calibrated parameters.
    GpField {
        #[serde(default = "default_range_param")]
        range_param: String,
        #[serde(default = "default_variance_param")]
        variance_param: String,
        #[serde(default = "default_noise_param")]
        noise_param: String,
    },
}

fn default_indicator() -> Option<IndicatorTerm> {
    Some(IndicatorTerm::default())
}
fn default_range_param() -> String {
    "phi_delta".into()
}
fn default_variance_param() -> String {
    "sigma2_delta".into()
}
fn default_noise_param() -> String {
    "sigma2_eps".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcConfig {
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_gamma_min")]
    pub gamma_min: f64,
    /// Defaults to half the particle count.
    #[serde(default)]
    pub ess_thresh: Option<f64>,
    #[serde(default = "default_k")]
    pub k: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_max_updates")]
    pub max_updates: u64,
    /// Defaults to the first parameter.
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_threshold_samples")]
    pub threshold_samples: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
}

fn default_particles() -> usize {
    2000
}
fn default_gamma_min() -> f64 {
    0.1
}
fn default_k() -> u64 {
    7
}
fn default_bins() -> usize {
    200
}
fn default_max_updates() -> u64 {
    100
}
fn default_threshold_samples() -> usize {
    1000
}
fn default_quantile() -> f64 {
    0.975
}
fn default_failure_fraction() -> f64 {
    0.5
}

impl Default for SmcConfig {
    fn default() -> Self {
        toml::from_str("").expect("every SMC field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    /// Random-walk scales in transformed space, one per parameter.
    pub scales: Vec<f64>,
    /// Transformed-space start point.
    pub start: Vec<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
}

fn default_iterations() -> u64 {
    100_000
}
fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub model: ModelConfig,
    pub priors: PriorConfig,
    /// Defaults to the composite likelihood, or the GP field likelihood
    /// for the toy model.
    #[serde(default)]
    pub likelihood: Option<LikelihoodConfig>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub smc: SmcConfig,
    #[serde(default)]
    pub mcmc: Option<McmcConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

impl RunConfig {
    /// Parses and validates a configuration. `base` anchors relative paths.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)
            .map_err(|e| Error::Config(format!("malformed configuration: {e}")))?;
        let missing: Vec<&str> = REQUIRED_FIELDS
            .iter()
            .copied()
            .filter(|k| !table.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing required fields: {}",
                missing.join(", ")
            )));
        }
        let mut cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        if let Some(base) = base {
            cfg.anchor_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn anchor_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        anchor(&mut self.output_dir);
        match &mut self.model {
            ModelConfig::Toy { data: Some(d), .. } => anchor(d),
            ModelConfig::External { client, .. } => {
                anchor(&mut client.workdir_root);
                // Explicitly relative command words refer to the config directory.
                for word in &mut client.command {
                    if word.starts_with("./") || word.starts_with("../") {
                        *word = base.join(&*word).to_string_lossy().into_owned();
                    }
                }
            }
            _ => {}
        }
    }

    pub fn space(&self) -> Result<ParamSpace> {
        match &self.priors {
            PriorConfig::Preset { preset } => ParamSpace::preset(preset),
            PriorConfig::Inline { params } => ParamSpace::new(params.clone()),
        }
    }

    pub fn smc_settings(&self) -> Result<SmcSettings> {
        let space = self.space()?;
        let s = &self.smc;
        let metric = match &s.metric {
            Some(m) => m.clone(),
            None => Metric::Parameter(space.params()[0].name.clone()),
        };
        Ok(SmcSettings {
            particles: s.particles,
            gamma_min: s.gamma_min,
            ess_thresh: s.ess_thresh.unwrap_or(s.particles as f64 / 2.0),
            k: s.k,
            bins: s.bins,
            max_updates: s.max_updates,
            metric,
            epsilon: s.epsilon,
            threshold_samples: s.threshold_samples,
            threshold_quantile: s.quantile,
            max_failure_fraction: s.max_failure_fraction,
            master_seed: self.master_seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let space = self.space()?;
        let settings = self.smc_settings()?;
        settings.validate()?;
        settings.metric.resolve(&space)?;
        match &self.model {
            ModelConfig::Toy {
                n,
                sigma2_eps,
                theta_param,
                ..
            } => {
                if *n == 0 {
                    return Err(Error::Config("model.n must be >= 1".into()));
                }
                if !(*sigma2_eps >= 0.0) {
                    return Err(Error::Config("model.sigma2_eps must be >= 0".into()));
                }
                if space.index_of(theta_param).is_none() {
                    return Err(Error::Config(format!(
                        "model.theta_param `{theta_param}` is not a parameter"
                    )));
                }
            }
            ModelConfig::SyntheticMultiEra { .. } => {}
            ModelConfig::External { client, .. } => {
                if client.command.is_empty() {
                    return Err(Error::Config("model.command must not be empty".into()));
                }
                if !(client.timeout_secs > 0.0) {
                    return Err(Error::Config("model.timeout_secs must be > 0".into()));
                }
            }
        }
        match self.likelihood_config() {
            LikelihoodConfig::Composite { terms, indicator } => CompositeLikelihood {
                terms,
                indicator,
            }
            .validate()?,
            LikelihoodConfig::GpField {
                range_param,
                variance_param,
                noise_param,
            } => {
                for p in [&range_param, &variance_param, &noise_param] {
                    if space.index_of(p).is_none() {
                        return Err(Error::Config(format!(
                            "likelihood parameter `{p}` is not defined"
                        )));
                    }
                }
                if !matches!(self.model, ModelConfig::Toy { .. }) {
                    return Err(Error::Config(
                        "the gp_field likelihood needs field data from the toy model".into(),
                    ));
                }
            }
        }
        if self.mode == Mode::Mcmc {
            let m = self.mcmc.as_ref().ok_or_else(|| {
                Error::Config("mode = \"mcmc\" needs an [mcmc] section".into())
            })?;
            if m.scales.len() != space.dim() || m.start.len() != space.dim() {
                return Err(Error::Config(format!(
                    "mcmc.scales and mcmc.start need {} entries",
                    space.dim()
                )));
            }
            if m.scales.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::Config("mcmc.scales must be >= 0".into()));
            }
            if !(0.0..1.0).contains(&m.burn_in_fraction) {
                return Err(Error::Config("mcmc.burn_in_fraction must lie in [0, 1)".into()));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn likelihood_config(&self) -> LikelihoodConfig {
        match (&self.likelihood, &self.model) {
            (Some(l), _) => l.clone(),
            (None, ModelConfig::Toy { .. }) => LikelihoodConfig::GpField {
                range_param: default_range_param(),
                variance_param: default_variance_param(),
                noise_param: default_noise_param(),
            },
            (None, _) => LikelihoodConfig::Composite {
                terms: crate::likelihood::default_terms(),
                indicator: default_indicator(),
            },
        }
    }

    /// Loads or simulates the toy data set.
    pub fn toy_data(&self) -> Result<Option<ToyData>> {
        let ModelConfig::Toy {
            n,
            theta_true,
            sigma2_eps,
            data_seed,
            data,
            ..
        } = &self.model
        else {
            return Ok(None);
        };
        match data {
            Some(path) => read_toy_data(path).map(Some),
            None => {
                let mut rng = ChaCha12Rng::seed_from_u64(*data_seed);
                toy_generate_data(*n, *theta_true, *sigma2_eps, &mut rng).map(Some)
            }
        }
    }

    /// Assembles the calibration problem. `run_id` names the external
    /// model's working-directory subtree.
    pub fn build_problem(&self, run_id: &str) -> Result<Problem> {
        let space = self.space()?;
        let (model, policy): (Box<dyn ForwardModel>, FailurePolicy) = match &self.model {
            ModelConfig::Toy {
                theta_param,
                failure_policy,
                ..
            } => {
                let data = self.toy_data()?.expect("toy model has data");
                (
                    Box::new(ToyModel::new(data.locations, theta_param.clone())),
                    *failure_policy,
                )
            }
            ModelConfig::SyntheticMultiEra { failure_policy } => (
                Box::new(SyntheticMultiEra::new(space.clone())?),
                *failure_policy,
            ),
            ModelConfig::External {
                client,
                failure_policy,
            } => (
                Box::new(ExternalModel::new(client.clone(), run_id)),
                *failure_policy,
            ),
        };
        let likelihood = match self.likelihood_config() {
            LikelihoodConfig::Composite { terms, indicator } => {
                Likelihood::Composite(CompositeLikelihood { terms, indicator })
            }
            LikelihoodConfig::GpField {
                range_param,
                variance_param,
                noise_param,
            } => {
                let data = self.toy_data()?.expect("toy model has data");
                let idx = |name: &str| space.index_of(name).expect("validated");
                Likelihood::GpField(GpFieldLikelihood {
                    observations: data.observations,
                    gp: GpDiscrepancy::new(data.locations)?,
                    range_index: idx(&range_param),
                    variance_index: idx(&variance_param),
                    noise_index: idx(&noise_param),
                })
            }
        };
        Ok(Problem::new(space, model, likelihood, policy))
    }
}

/// Reads and validates a run configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml_str(&text, base.parent())
}

#[derive(Debug, Deserialize)]
struct ToyRow {
    lat: f64,
    lon: f64,
    z: f64,
}

/// Reads toy data from a CSV file with columns `lat,lon,z`.
pub fn read_toy_data(path: &Path) -> Result<ToyData> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut locations = Vec::new();
    let mut observations = Vec::new();
    for row in r.deserialize::<ToyRow>() {
        let row = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        locations.push([row.lat, row.lon]);
        observations.push(row.z);
    }
    if locations.is_empty() {
        return Err(Error::Config(format!("{} holds no data rows", path.display())));
    }
    Ok(ToyData {
        locations,
        observations,
    })
}

/// Writes toy data as `lat,lon,z` CSV.
pub fn write_toy_data(path: &Path, data: &ToyData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(["lat", "lon", "z"]).map_err(io)?;
    for (s, z) in data.locations.iter().zip(&data.observations) {
        w.write_record([s[0].to_string(), s[1].to_string(), z.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
