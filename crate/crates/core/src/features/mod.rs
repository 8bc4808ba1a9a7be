//! Model inputs: calendar encodings of the daily counts, static substation
//! descriptors, the two scalers, and bootstrap random-forest selection of
//! static features.

mod scaler;
mod select;
mod statics;
mod temporal;

pub use scaler::{Scaler, ScalerKind};
pub use select::{select_features, write_importance_csv, FeatureImportance, SelectConfig, Selection};
pub use statics::{static_pool, FeatureGroups, StaticTable, STATIC_DISCRETE, STATIC_NAMES};
pub use temporal::{encode_temporal, encode_window, is_discrete_temporal, log_transform, F_X, TEMPORAL_NAMES};

use thiserror::Error;

use crate::trees::TreeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("count must be non-negative, got {0}")]
    NegativeCount(f64),
    #[error("scaler used before fit")]
    NotFitted,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("no daily series for substation {0}")]
    MissingSeries(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Trees(#[from] TreeError),
}
