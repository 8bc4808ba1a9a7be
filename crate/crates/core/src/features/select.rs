use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::trees::{fit_random_forest, ForestConfig, TreeError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub iterations: usize,
    pub top_k: usize,
    pub stability: f64,
    pub n_trees: usize,
    pub min_leaf: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { iterations: 100, top_k: 15, stability: 0.8, n_trees: 100, min_leaf: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub index: usize,
    pub mean_importance: f64,
    /// Coefficient of variation of the importance over all iterations.
    pub cv: f64,
    pub selection_frequency: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen column indices, ascending.
    pub selected: Vec<usize>,
    /// Every candidate, by decreasing mean importance.
    pub report: Vec<FeatureImportance>,
}

fn has_both(y: &[bool], idx: &[usize]) -> bool {
    let pos = idx.iter().filter(|&&i| y[i]).count();
    pos > 0 && pos < idx.len()
}

/// Stability selection with bootstrap random forests.
///
/// Iteration `i` draws a bootstrap resample with seed `seed + i` and fits a
/// forest on it. A feature is eligible when it lands in the iteration's
/// top-k in at least `stability` of the iterations; eligible features are
/// ranked by increasing coefficient of variation and shortfalls are filled
/// by mean importance.
pub fn select_features(
    x: &[Vec<f64>],
    y: &[bool],
    names: &[String],
    cfg: &SelectConfig,
    seed: u64,
) -> Result<Selection, FeatureError> {
    if cfg.iterations == 0 || cfg.top_k == 0 || !(0.0..=1.0).contains(&cfg.stability) {
        return Err(FeatureError::Config("selection needs iterations ≥ 1, top_k ≥ 1 and stability in [0, 1]".into()));
    }
    if x.is_empty() {
        return Err(TreeError::Empty.into());
    }
    let f = x[0].len();
    if names.len() != f {
        return Err(FeatureError::Shape { expected: f, got: names.len() });
    }
    if !has_both(y, &(0..y.len()).collect::<Vec<_>>()) {
        return Err(TreeError::SingleClass.into());
    }
    if f < cfg.top_k {
        log::warn!("only {f} candidate features for top_k = {}; all are selected", cfg.top_k);
    }
    let forest = ForestConfig { n_trees: cfg.n_trees, min_leaf: cfg.min_leaf, ..ForestConfig::default() };
    let k = cfg.top_k.min(f);
    let n = x.len();
    let mut importance = vec![Vec::with_capacity(cfg.iterations); f];
    let mut hits = vec![0usize; f];
    for it in 0..cfg.iterations {
        let iter_seed = seed.wrapping_add(it as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
        let idx = loop {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            if has_both(y, &idx) {
                break idx;
            }
        };
        let xb: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yb: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        let (_, imp) = fit_random_forest(&xb, &yb, &forest, iter_seed)?;
        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
        for &c in &order[..k] {
            hits[c] += 1;
        }
        for (c, v) in imp.into_iter().enumerate() {
            importance[c].push(v);
        }
    }
    let iters = cfg.iterations as f64;
    let mut report: Vec<FeatureImportance> = (0..f)
        .map(|c| {
            let mean = importance[c].iter().sum::<f64>() / iters;
            let var = importance[c].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / iters;
            FeatureImportance {
                feature: names[c].clone(),
                index: c,
                mean_importance: mean,
                cv: if mean > 0.0 { var.sqrt() / mean } else { f64::INFINITY },
                selection_frequency: hits[c] as f64 / iters,
                selected: false,
            }
        })
        .collect();
    let by_importance = |a: &FeatureImportance, b: &FeatureImportance| {
        b.mean_importance.total_cmp(&a.mean_importance).then(a.index.cmp(&b.index))
    };
    let mut eligible: Vec<&FeatureImportance> = report.iter().filter(|r| r.selection_frequency >= cfg.stability).collect();
    eligible.sort_by(|a, b| a.cv.total_cmp(&b.cv).then_with(|| by_importance(a, b)));
    let mut selected: Vec<usize> = eligible.iter().take(k).map(|r| r.index).collect();
    if selected.len() < k {
        let mut rest: Vec<&FeatureImportance> = report.iter().filter(|r| !selected.contains(&r.index)).collect();
        rest.sort_by(|a, b| by_importance(a, b));
        let fill: Vec<usize> = rest.iter().take(k - selected.len()).map(|r| r.index).collect();
        selected.extend(fill);
    }
    selected.sort_unstable();
    for r in &mut report {
        r.selected = selected.contains(&r.index);
    }
    report.sort_by(by_importance);
    Ok(Selection { selected, report })
}

pub fn write_importance_csv<W: Write>(report: &[FeatureImportance], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "mean_importance", "cv", "selection_frequency", "selected"])?;
    for r in report {
        w.write_record([
            r.feature.clone(),
            r.mean_importance.to_string(),
            r.cv.to_string(),
            r.selection_frequency.to_string(),
            r.selected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
