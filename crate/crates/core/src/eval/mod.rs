//! Metrics, stratified folds and cross-validated evaluation of the three
//! models plus a majority-class baseline.

pub mod crossval;
pub mod folds;
pub mod metrics;
pub mod table;

use thiserror::Error;

use crate::models::TrainError;
use crate::sampling::SamplingError;

pub use crossval::{run_crossval, CrossvalConfig, CrossvalReport, CrossvalRun, FoldModels, Modality, ModelKind, ModelReport, PredictionRecord};
pub use folds::{kfold_split, leak_check, Fold};
pub use metrics::{mean_metrics, metrics, ConfusionMatrix, Metrics};
pub use table::{render_csv, render_table};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("fold split: {0}")]
    Folds(String),
    #[error("fold {fold}: participant {participant} is in both the training and the test split")]
    Leak { fold: usize, participant: String },
    #[error("fold {fold}: {source}")]
    Sampling { fold: usize, source: SamplingError },
    #[error("fold {fold}, {model} model: {source}")]
    Train { fold: usize, model: &'static str, source: TrainError },
}
