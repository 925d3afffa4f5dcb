use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ForwardModel, ModelInput, ModelOutput};
use crate::error::{Error, ModelError, Result};
use crate::parallel::StreamKey;

/// `Y(s, theta) = 5 exp(-theta * lat * lon)`.
pub fn toy_eval(s: [f64; 2], theta: f64) -> f64 {
    5.0 * (-theta * (s[0] * s[1])).exp()
}

/// The systematic discrepancy used to generate toy data, `-1.5 lat lon`.
pub fn toy_discrepancy(s: [f64; 2]) -> f64 {
    -1.5 * (s[0] * s[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub locations: Vec<[f64; 2]>,
    pub observations: Vec<f64>,
}

/// Draws `n` uniform locations in the unit square and observations
/// `Z = Y(s, theta_true) + delta(s) + eps` with `eps ~ N(0, sigma2_eps)`.
pub fn toy_generate_data<R: Rng + ?Sized>(
    n: usize,
    theta_true: f64,
    sigma2_eps: f64,
    rng: &mut R,
) -> Result<ToyData> {
    if n == 0 {
        return Err(Error::Config("toy data set needs n >= 1".into()));
    }
    if !(sigma2_eps >= 0.0) || !theta_true.is_finite() {
        return Err(Error::Config(
            "toy data needs finite theta and sigma2_eps >= 0".into(),
        ));
    }
    let noise = Normal::new(0.0, sigma2_eps.sqrt())
        .map_err(|e| Error::Config(format!("toy noise: {e}")))?;
    let locations: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let observations = locations
        .iter()
        .map(|&s| toy_eval(s, theta_true) + toy_discrepancy(s) + noise.sample(rng))
        .collect();
    Ok(ToyData {
        locations,
        observations,
    })
}

/// The toy simulator: returns `Y(s_i, theta)` at every data location as the
/// output field.
#[derive(Debug, Clone)]
pub struct ToyModel {
    locations: Vec<[f64; 2]>,
    theta_name: String,
}

impl ToyModel {
    pub fn new(locations: Vec<[f64; 2]>, theta_name: impl Into<String>) -> Self {
        Self {
            locations,
            theta_name: theta_name.into(),
        }
    }

    pub fn locations(&self) -> &[[f64; 2]] {
        &self.locations
    }
}

impl ForwardModel for ToyModel {
    fn evaluate(&self, input: &ModelInput<'_>, _key: &StreamKey) -> Result<ModelOutput, ModelError> {
        let theta = input.value(&self.theta_name).ok_or_else(|| {
            ModelError::Domain(format!("toy model needs parameter `{}`", self.theta_name))
        })?;
        Ok(ModelOutput {
            field: Some(self.locations.iter().map(|&s| toy_eval(s, theta)).collect()),
            ..ModelOutput::default()
        })
    }
}
