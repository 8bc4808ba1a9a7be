//! End-to-end orchestration shared by the command-line tool and the
//! integration tests: configuration, data preparation, model runs and
//! persisted artifacts.

mod config;
mod gbt_run;
mod io;
mod prepare;
mod stgt_run;

pub use config::{stage_seed, FeatureSettings, GraphSettings, IngestSettings, LossSettings, PipelineConfig};
pub use gbt_run::{gbt_feature_names, gbt_rows, run_gbt, GbtRun};
pub use io::{
    evaluate_predictions, read_json, read_predictions_csv, read_text, write_json, write_predictions_csv, write_text, MetricsFile,
    PredictionRow,
};
pub use prepare::{ingest_events, prepare, run_selection, static_selection, Prepared};
pub use stgt_run::{build_dataset, day_attention, fit_preprocess, predict_day, run_stgt, score_samples, Preprocess, StgtRun};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Trees(#[from] crate::trees::TreeError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error(transparent)]
    Model(#[from] crate::stgt::ModelError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("{path}: {err}")]
    Json { path: String, err: serde_json::Error },
    #[error("{path}: {err}")]
    Csv { path: String, err: csv::Error },
}
