//! Two-phase training.
//!
//! Phase one alternates a confusion-network step with an autoencoder step
//! on every batch. Phase two keeps doing that and adds a backtranslation
//! step per batch on synthetic items regenerated every
//! `mixup_refresh_epochs` epochs.

mod backtranslation;
mod config;
mod run;
mod steps;

pub use backtranslation::{
    generate_backtranslation_set, identity_items, mixup_embedding, BacktranslationItem, BacktranslationOptions,
};
pub use config::TrainConfig;
pub use run::{latest_checkpoint, train, EpochMetrics, TrainOutcome, Trainer, METRICS_HEADER};
pub use steps::{autoencoder_gradients, autoencoder_step, backtranslation_step, confusion_step, objective, AutoencoderStats, ConfusionStats};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::inference::InferenceError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config key {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("mixup needs two distinct singers, got {0} twice")]
    SameSinger(usize),
    #[error("mixup weight {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("need at least 2 singers, got {0}")]
    TooFewSingers(usize),
    #[error("no checkpoint to resume from in {0}")]
    NothingToResume(String),
    #[error("i/o on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}
