//! Deterministic analytic stand-in with the output signature of a multi-era
//! ice-sheet simulator. Every output is a simple function of the prior
//! positions `u_j in [0, 1]` of the parameters and their mean `u_bar`.

use super::{ForwardModel, ModelInput, ModelOutput};
use crate::error::{Error, ModelError, Result};
use crate::param_space::ParamSpace;
use crate::parallel::StreamKey;

pub const SCALAR_NAMES: [&str; 5] = ["sle_plio", "sle_lig", "sle_lgm", "volume", "grounded_area"];
pub const PROJECTION_NAMES: [&str; 3] = ["sle_2100", "sle_2300", "sle_2500"];
pub const SPATIAL_BITS: usize = 10;

/// Ice presence at site `j` is lost once parameter `j` sits in the top tenth
/// of its prior range.
const BIT_THRESHOLD: f64 = 0.9;

/// Evaluates the stand-in at transformed-space `theta`.
pub fn synthetic_multi_era_eval(space: &ParamSpace, theta: &[f64]) -> Result<ModelOutput, ModelError> {
    if theta.len() != space.dim() {
        return Err(ModelError::Domain(format!(
            "expected {} parameters, got {}",
            space.dim(),
            theta.len()
        )));
    }
    if space.dim() < SPATIAL_BITS {
        return Err(ModelError::Domain(format!(
            "needs at least {SPATIAL_BITS} parameters, got {}",
            space.dim()
        )));
    }
    for (p, &x) in space.params().iter().zip(theta) {
        if !p.log_density(x).is_finite() {
            return Err(ModelError::Domain(format!(
                "`{}` = {x} is outside its prior support",
                p.name
            )));
        }
    }
    let u = space.prior_positions(theta);
    let u_bar = u.iter().sum::<f64>() / u.len() as f64;

    let scalars = [
        5.0 + 20.0 * u_bar,
        3.5 + 4.0 * u_bar,
        -5.0 - 10.0 * u_bar,
        (26.0 - 4.0 * u_bar) * 1e6,
        (12.0 - 2.0 * u_bar) * 1e6,
    ];
    let projections = [2.0 * u_bar, 10.0 * u_bar, 16.0 * u_bar];
    Ok(ModelOutput {
        scalars: SCALAR_NAMES
            .iter()
            .map(|s| s.to_string())
            .zip(scalars)
            .collect(),
        bits: u[..SPATIAL_BITS]
            .iter()
            .map(|&uj| u8::from(uj < BIT_THRESHOLD))
            .collect(),
        field: None,
        projections: PROJECTION_NAMES
            .iter()
            .map(|s| s.to_string())
            .zip(projections)
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticMultiEra {
    space: ParamSpace,
}

impl SyntheticMultiEra {
    pub fn new(space: ParamSpace) -> Result<Self> {
        if space.dim() < SPATIAL_BITS {
            return Err(Error::Config(format!(
                "synthetic multi-era model needs at least {SPATIAL_BITS} parameters"
            )));
        }
        Ok(Self { space })
    }
}

impl ForwardModel for SyntheticMultiEra {
    fn evaluate(&self, input: &ModelInput<'_>, _key: &StreamKey) -> Result<ModelOutput, ModelError> {
        synthetic_multi_era_eval(&self.space, input.transformed)
    }
}
