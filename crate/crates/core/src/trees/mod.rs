//! CART trees, random forests and gradient-boosted trees.
//!
//! Feature matrices are slices of equal-length rows. A sample goes to the
//! left child when `x[feature] <= threshold`.

mod cart;
mod forest;
mod gbt;

pub use cart::{fit_classification_tree, fit_regression_tree, Tree, TreeConfig, TreeNode};
pub use forest::{fit_random_forest, ForestConfig, RandomForest};
pub use gbt::{fit_gbt, logistic_loss, predict_gbt, GbtConfig, GbtModel};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("no training rows")]
    Empty,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("expected {expected} features, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub(crate) fn check_rows(x: &[Vec<f64>], n_targets: usize) -> Result<usize, TreeError> {
    let Some(first) = x.first() else { return Err(TreeError::Empty) };
    let f = first.len();
    if let Some(bad) = x.iter().find(|r| r.len() != f) {
        return Err(TreeError::Shape { expected: f, got: bad.len() });
    }
    if n_targets != x.len() {
        return Err(TreeError::Config(format!("{} rows but {n_targets} targets", x.len())));
    }
    Ok(f)
}

pub(crate) fn check_two_classes(y: &[bool]) -> Result<(), TreeError> {
    let positives = y.iter().filter(|&&b| b).count();
    if positives == 0 || positives == y.len() {
        return Err(TreeError::SingleClass);
    }
    Ok(())
}
