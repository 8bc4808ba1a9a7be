//! Training and evaluation: temporal splits, forward-chaining folds, day-grouped
//! mini-batches with class-weighted sampling, Adam with gradient clipping and
//! early stopping, threshold selection and bootstrap metrics.

mod data;
mod fit;
mod metrics;
mod optim;
mod split;

pub use data::{Bundle, SeqDataset, SyntheticMember};
pub use fit::{predict_dataset, train_stgt, EpochStats, History, StopReason, TrainConfig};
pub use metrics::{
    confusion, evaluate, f_beta, percentile, select_threshold, write_metrics_csv, Confusion, EvalConfig, MetricCi,
    MetricsReport, MetricsRow,
};
pub use optim::{clip_grad_norm, Adam};
pub use split::{check_forward_chaining, check_partition_order, cv_folds, temporal_split, Fold, Partitions, SplitSpec};

use thiserror::Error;

use crate::stgt::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {stats}")]
    NonFinite { epoch: usize, batch: usize, stats: String },
    #[error("evaluation input contains {0} synthetic rows")]
    SyntheticRows(usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
