//! Accuracy metrics, classification maps and the repeated-experiment harness.

mod experiment;
mod map;
mod metrics;

pub use experiment::{
    repeat_experiment, repeat_experiment_with, run_experiment, ExperimentOptions, ExperimentOutcome, PreparedScene,
    RepeatedReport, RepetitionResult, Summary,
};
pub use map::{render_map, save_map, Palette, DEFAULT_PALETTE};
pub use metrics::{confusion, metrics, ConfusionMatrix, MetricsReport};

use thiserror::Error;

use crate::basenet::BaseNetError;
use crate::data::DataError;
use crate::ensemble::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] BaseNetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("repetition {index}: {source}")]
    Repetition {
        index: usize,
        #[source]
        source: Box<EvalError>,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;
