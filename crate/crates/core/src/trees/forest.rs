use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, check_two_classes, fit_classification_tree, Tree, TreeConfig, TreeError};

#[derive(Clone, Debug, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per split; `None` means `floor(√F)`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_leaf: 5, max_features: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl RandomForest {
    /// Mean leaf positive fraction over the trees.
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, TreeError> {
        if row.len() != self.n_features {
            return Err(TreeError::Shape { expected: self.n_features, got: row.len() });
        }
        Ok(self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len().max(1) as f64)
    }
}

/// Bagged Gini trees. Importance is the impurity decrease per feature, each
/// tree's contribution scaled by its bootstrap size, normalized to sum to 1
/// (all zeros when no tree ever splits).
pub fn fit_random_forest(
    x: &[Vec<f64>],
    y: &[bool],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<(RandomForest, Vec<f64>), TreeError> {
    let f = check_rows(x, y.len())?;
    check_two_classes(y)?;
    if cfg.n_trees == 0 {
        return Err(TreeError::Config("a forest needs at least one tree".into()));
    }
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        max_features: Some(cfg.max_features.unwrap_or(((f as f64).sqrt().floor() as usize).max(1))),
        lambda: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut importance = vec![0.0; f];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let (tree, imp) = fit_classification_tree(x, y, &idx, &tree_cfg, &mut rng)?;
        for (acc, v) in importance.iter_mut().zip(imp) {
            *acc += v / n as f64;
        }
        trees.push(tree);
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        importance.iter_mut().for_each(|v| *v /= total);
    }
    Ok((RandomForest { trees, n_features: f }, importance))
}
