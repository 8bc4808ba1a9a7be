//! Class rebalancing for training partitions: noisy replication of positive
//! rows, SMOTE interpolation, and topping up to a target positive share.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("row {0} belongs to the {1:?} partition; only training rows can be augmented")]
    NotTraining(usize, Partition),
    #[error("rows have inconsistent widths ({expected} vs {got})")]
    Shape { expected: usize, got: usize },
    #[error("no positive rows to augment")]
    NoPositives,
    #[error("{0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Replicated,
    Smote,
}

impl Provenance {
    pub fn is_synthetic(self) -> bool {
        self != Provenance::Original
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugRow {
    pub features: Vec<f64>,
    pub label: bool,
    pub partition: Partition,
    pub provenance: Provenance,
    /// For synthetic rows, the input row they were derived from.
    pub parent: Option<usize>,
}

impl AugRow {
    pub fn original(features: Vec<f64>, label: bool, partition: Partition) -> Self {
        Self { features, label, partition, provenance: Provenance::Original, parent: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub smote_k: usize,
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.05, smote_k: 5, target_ratio: 0.30, seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.target_ratio > 0.0 && self.target_ratio < 1.0) {
            return Err(AugmentError::Config(format!("target_ratio must be in (0, 1), got {}", self.target_ratio)));
        }
        if self.smote_k == 0 {
            return Err(AugmentError::Config("smote_k must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(AugmentError::Config(format!("noise_sigma must be non-negative, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Row counts per stage, written next to training artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub original_rows: usize,
    pub original_positives: usize,
    pub replicated: usize,
    pub smote: usize,
    pub output_rows: usize,
    pub positive_fraction: f64,
}

/// One noisy copy per input row; N(0, σ²) is added to every column not
/// flagged in `discrete`.
pub fn replicate_with_noise(rows: &[&[f64]], sigma: f64, discrete: &[bool], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(c, &v)| if discrete.get(c).copied().unwrap_or(false) || sigma == 0.0 { v } else { v + noise.sample(rng) })
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other points of every point by Euclidean distance, ties
/// broken by index.
pub fn nearest_neighbors(points: &[&[f64]], k: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> =
                (0..points.len()).filter(|&j| j != i).map(|j| (sq_dist(points[i], points[j]), j)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Draws `n_needed` SMOTE rows. Each picks a base point `p` uniformly, one of
/// its `k` nearest neighbours `q`, and returns `p + u (q - p)` with
/// `u ~ U(0, 1)`; discrete columns come from whichever parent is nearer.
/// Returns the rows and the index of `p`. A single point falls back to
/// noisy replication with `sigma`.
pub fn smote(
    points: &[&[f64]],
    k: usize,
    n_needed: usize,
    discrete: &[bool],
    sigma: f64,
    rng: &mut impl Rng,
) -> Vec<(Vec<f64>, usize)> {
    if points.is_empty() || n_needed == 0 {
        return Vec::new();
    }
    if points.len() == 1 {
        log::warn!("SMOTE needs two positives; falling back to noisy replication");
        return (0..n_needed).map(|_| (replicate_with_noise(points, sigma, discrete, rng).remove(0), 0)).collect();
    }
    let k = k.min(points.len() - 1).max(1);
    let neighbors = nearest_neighbors(points, k);
    (0..n_needed)
        .map(|_| {
            let i = rng.gen_range(0..points.len());
            let j = neighbors[i][rng.gen_range(0..k)];
            let u: f64 = rng.gen();
            let (p, q) = (points[i], points[j]);
            let nearer = if u <= 0.5 { p } else { q };
            let row = (0..p.len())
                .map(|c| if discrete.get(c).copied().unwrap_or(false) { nearer[c] } else { p[c] + u * (q[c] - p[c]) })
                .collect();
            (row, i)
        })
        .collect()
}

/// Smallest positive count `P` with `P / (P + negatives) >= target`.
pub fn positives_needed(negatives: usize, target: f64) -> usize {
    let mut p = (target * negatives as f64 / (1.0 - target)).ceil().max(0.0) as usize;
    while p > 0 && (p - 1) as f64 >= target * ((p - 1 + negatives) as f64) {
        p -= 1;
    }
    while (p as f64) < target * ((p + negatives) as f64) {
        p += 1;
    }
    p
}

/// Adds synthetic positives until they make up `target_ratio` of the rows.
///
/// Stage 1 adds one noisy copy per original positive (fewer if that already
/// overshoots), stage 2 fills the remainder with SMOTE over the original
/// positives. Input rows are returned first and unchanged.
pub fn balance_to_ratio(
    rows: &[AugRow],
    discrete: &[bool],
    cfg: &AugmentConfig,
) -> Result<(Vec<AugRow>, AugmentSummary), AugmentError> {
    cfg.validate()?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.partition != Partition::Train) {
        return Err(AugmentError::NotTraining(i, r.partition));
    }
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().find(|r| r.features.len() != first.features.len()) {
            return Err(AugmentError::Shape { expected: first.features.len(), got: bad.features.len() });
        }
    }
    let positive_idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].label).collect();
    if positive_idx.is_empty() {
        return Err(AugmentError::NoPositives);
    }
    let negatives = rows.len() - positive_idx.len();
    let need = positives_needed(negatives, cfg.target_ratio).saturating_sub(positive_idx.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = rows.to_vec();

    let stage1: Vec<usize> = positive_idx.iter().copied().take(need).collect();
    let sources: Vec<&[f64]> = stage1.iter().map(|&i| rows[i].features.as_slice()).collect();
    for (feat, &parent) in replicate_with_noise(&sources, cfg.noise_sigma, discrete, &mut rng).into_iter().zip(&stage1) {
        out.push(AugRow { features: feat, label: true, partition: Partition::Train, provenance: Provenance::Replicated, parent: Some(parent) });
    }

    let pool: Vec<&[f64]> = positive_idx.iter().map(|&i| rows[i].features.as_slice()).collect();
    let smote_rows = smote(&pool, cfg.smote_k, need - stage1.len(), discrete, cfg.noise_sigma, &mut rng);
    let n_smote = smote_rows.len();
    for (feat, p) in smote_rows {
        out.push(AugRow { features: feat, label: true, partition: Partition::Train, provenance: Provenance::Smote, parent: Some(positive_idx[p]) });
    }

    let positives = out.iter().filter(|r| r.label).count();
    let summary = AugmentSummary {
        original_rows: rows.len(),
        original_positives: positive_idx.len(),
        replicated: stage1.len(),
        smote: n_smote,
        output_rows: out.len(),
        positive_fraction: positives as f64 / out.len() as f64,
    };
    log::info!("augmentation: {summary:?}");
    Ok((out, summary))
}
