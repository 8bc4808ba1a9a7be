use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, check_two_classes, fit_regression_tree, Tree, TreeConfig, TreeError, TreeNode};
use crate::autodiff::sigmoid;

/// Keeps probabilities strictly inside (0, 1) for saturated margins.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub min_leaf: usize,
    pub lambda: f64,
    /// Weight positives by `(1-r)/r`, `r` the training positive rate.
    pub class_weighting: bool,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 6,
            subsample: 0.8,
            min_leaf: 5,
            lambda: 1.0,
            class_weighting: true,
        }
    }
}

/// Additive logistic model: `p = σ(base + lr · Σ trees)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub positive_weight: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

/// Mean (optionally positive-weighted) logistic loss of margins.
pub fn logistic_loss(margins: &[f64], y: &[bool], positive_weight: f64) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &label)| {
            // ln(1 + e^{-m}) for positives, ln(1 + e^{m}) for negatives
            let z = if label { -m } else { m };
            let l = z.max(0.0) + (-z.abs()).exp().ln_1p();
            if label { positive_weight * l } else { l }
        })
        .sum();
    total / margins.len() as f64
}

/// Newton boosting on the logistic loss. Returns the model and the training
/// loss after each round (entry 0 is the base-score loss).
pub fn fit_gbt(x: &[Vec<f64>], y: &[bool], cfg: &GbtConfig, seed: u64) -> Result<(GbtModel, Vec<f64>), TreeError> {
    let f = check_rows(x, y.len())?;
    check_two_classes(y)?;
    if !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) || cfg.learning_rate < 0.0 {
        return Err(TreeError::Config("subsample must lie in (0, 1] and learning_rate be non-negative".into()));
    }
    let n = x.len();
    let rate = y.iter().filter(|&&b| b).count() as f64 / n as f64;
    let positive_weight = if cfg.class_weighting { (1.0 - rate) / rate } else { 1.0 };
    let base_score = (rate / (1.0 - rate)).ln();
    let tree_cfg = TreeConfig { max_depth: Some(cfg.max_depth), min_leaf: cfg.min_leaf, max_features: None, lambda: cfg.lambda };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = vec![base_score; n];
    let mut trace = vec![logistic_loss(&margins, y, positive_weight)];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    let rows_per_tree = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
    let (mut grad, mut hess) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            let w = if y[i] { positive_weight } else { 1.0 };
            grad[i] = w * (p - f64::from(u8::from(y[i])));
            hess[i] = w * p * (1.0 - p);
        }
        let mut idx = sample(&mut rng, n, rows_per_tree).into_vec();
        idx.sort_unstable();
        let tree = if idx.len() >= 2 * cfg.min_leaf.max(1) {
            fit_regression_tree(x, &grad, &hess, &idx, &tree_cfg, &mut rng)?.0
        } else {
            // too few rows to split: fall back to a single Newton leaf
            let (g, h): (f64, f64) = idx.iter().fold((0.0, 0.0), |(g, h), &i| (g + grad[i], h + hess[i]));
            Tree { nodes: vec![TreeNode { feature: None, threshold: 0.0, children: None, value: -g / (h + cfg.lambda) }] }
        };
        for (m, row) in margins.iter_mut().zip(x) {
            *m += cfg.learning_rate * tree.predict(row);
        }
        trees.push(tree);
        trace.push(logistic_loss(&margins, y, positive_weight));
    }
    Ok((GbtModel { base_score, learning_rate: cfg.learning_rate, n_features: f, positive_weight, trees }, trace))
}

/// Failure probabilities for each row.
pub fn predict_gbt(model: &GbtModel, x: &[Vec<f64>]) -> Result<Vec<f64>, TreeError> {
    x.iter()
        .map(|row| {
            if row.len() != model.n_features {
                return Err(TreeError::Shape { expected: model.n_features, got: row.len() });
            }
            Ok(sigmoid(model.margin(row)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
        })
        .collect()
}
