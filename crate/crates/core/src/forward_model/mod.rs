//! Forward models behind a single evaluation interface.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::parallel::StreamKey;

mod external;
mod synthetic;
mod toy;

pub use external::{external_model_eval, ExternalModel, ExternalModelConfig, PARAMS_FILE, OUTPUT_FILE};
pub use synthetic::{
    synthetic_multi_era_eval, SyntheticMultiEra, PROJECTION_NAMES, SCALAR_NAMES, SPATIAL_BITS,
};
pub use toy::{toy_discrepancy, toy_eval, toy_generate_data, ToyData, ToyModel};

/// Everything a model run produced. Which parts are populated depends on the
/// model: the toy model fills `field`, the ice-like models fill `scalars`,
/// `bits` and `projections`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub bits: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<Vec<f64>>,
    #[serde(default)]
    pub projections: BTreeMap<String, f64>,
}

/// A parameter setting as seen by a model.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub names: &'a [String],
    /// Sampling-space coordinates.
    pub transformed: &'a [f64],
    /// Natural-space values, the ones a simulator consumes.
    pub natural: &'a [f64],
}

impl ModelInput<'_> {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.natural[i])
    }
}

pub trait ForwardModel: Send + Sync {
    /// Runs the model once. `key` identifies the evaluation (cycle, particle,
    /// proposal) so models with on-disk state can isolate concurrent runs.
    fn evaluate(&self, input: &ModelInput<'_>, key: &StreamKey) -> Result<ModelOutput, ModelError>;
}
