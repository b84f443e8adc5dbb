//! Frozen-feature evaluations: a linear probe and a supervised scanpath
//! decoder.

mod ablation;
mod decoder;
mod features;
mod linear;
mod logistic;

pub use crate::metrics::Scanpath;
pub use ablation::{run_ordering_ablation, AblationConfig, AblationError, AblationReport, AblationRun};
pub use decoder::{
    decode_all, decode_scanpath, scanpath_loss, search_scanpath, train_decoder, DecoderConfig, DecoderHeads,
    DecoderReport, LossWeights, ScanpathDecoder, ScanpathTarget, START_FIXATION,
};
pub use features::{extract_probe_features, probe_feature_matrix, Standardizer};
pub use linear::{linear_probe, ProbeReport};
pub use logistic::{
    fit_logistic, fit_logistic_from, fit_logistic_ovr, logistic_objective, BinaryLogistic, LogisticConfig,
};

use thiserror::Error;

use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::numcore::NumError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("task {task} unknown; decoder has {n_tasks} tasks")]
    UnknownTask { task: usize, n_tasks: usize },
    #[error("{what}: expected {expected} rows, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0}")]
    InvalidArgument(String),
}
