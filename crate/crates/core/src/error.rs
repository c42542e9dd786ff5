use thiserror::Error;

use crate::scenario::Violation;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed scenario file: {0}")]
    Parse(String),
    #[error("scenario does not match the schema: {0}")]
    Schema(String),
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("controller reached an inconsistent state: {0}")]
    Controller(String),
    #[error("{0}")]
    Analysis(String),
    #[error("calibration target {target} unreachable: MLR spans [{low:.3}, {high:.3}] over the threshold bounds")]
    Unreachable { target: f64, low: f64, high: f64 },
}

impl SimError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn csv(path: impl AsRef<std::path::Path>, source: csv::Error) -> Self {
        SimError::Csv { path: path.as_ref().display().to_string(), source }
    }
}
