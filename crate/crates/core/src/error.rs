use thiserror::Error;

use crate::drift::DriftError;
use crate::engine::EngineError;
use crate::feature::FeatureError;
use crate::harness::HarnessError;
use crate::metrics::MetricError;
use crate::repair::RepairError;
use crate::temporal::TemporalError;
use crate::threshold::ThresholdError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("repair pass {iteration}: {source}")]
    RepairPass {
        iteration: usize,
        #[source]
        source: RepairError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
