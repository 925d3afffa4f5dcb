use std::path::PathBuf;

use thiserror::Error;

/// Failure modes of a single forward-model run.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("model exited unsuccessfully ({status})")]
    Failed { status: String },
    #[error("model exceeded its {seconds:.1} s wall-clock limit")]
    Timeout { seconds: f64 },
    #[error("could not parse model output: {0}")]
    Parse(String),
    #[error("parameter vector outside model domain: {0}")]
    Domain(String),
    #[error("could not launch model: {0}")]
    Launch(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure: {message} (parameters: {params:?})")]
    Numerical { message: String, params: Vec<f64> },
    #[error("degenerate swarm: {0}")]
    DegenerateSwarm(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model-failure storm: {failed} of {total} evaluations failed in {stage} (tolerance {tolerance})")]
    ModelFailureStorm {
        stage: String,
        failed: usize,
        total: usize,
        tolerance: f64,
    },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("item {index} failed: {source}")]
    Item {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips [`Error::Item`] wrappers added by parallel maps.
    pub fn root(&self) -> &Error {
        match self {
            Error::Item { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::DegenerateSwarm(_) => 3,
            Error::ModelFailureStorm { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
