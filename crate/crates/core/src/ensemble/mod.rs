//! Student/teacher self-ensembling with a consistency filter.
//!
//! The student is trained by Adam on cross-entropy over augmented labeled
//! samples plus a filtered consistency loss against the teacher's mean
//! prediction over several augmentations of each unlabeled sample. The
//! teacher follows the student by exponential moving average only.

mod adam;
mod config;
mod consistency;
mod policy;
mod trainer;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::TrainConfig;
pub use consistency::{
    build_filter, consistency_loss, consistency_value, ema_update, ensemble_mean_prediction,
    rampup_q, unfiltered_consistency_loss, FilterMask, TeacherPrediction,
};
pub use policy::{FilterContext, FixedQuota, KeepAll, PolicyRegistry, RampUp, SelectionPolicy};
pub use trainer::{
    predict, predict_one, train, EnsembleState, EpochEvaluator, EpochRecord, IterationRecord,
    TrainHistory, Trainer,
};

use thiserror::Error;

use crate::basenet::BaseNetError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] BaseNetError),
    #[error(
        "non-finite loss at iteration {iteration} (L_cls = {loss_cls}, L_con = {loss_con}); \
         labeled batch {labeled_batch:?}, unlabeled batch {unlabeled_batch:?}"
    )]
    Diverged {
        iteration: usize,
        loss_cls: f64,
        loss_con: f64,
        labeled_batch: Vec<usize>,
        unlabeled_batch: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;
