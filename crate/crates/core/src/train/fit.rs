use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_grad_norm, confusion, Adam, SeqDataset, TrainError};
use crate::autodiff::{Matrix, Tape};
use crate::stgt::{focal_loss, LossConfig, StgtModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Targets per mini-batch; whole day bundles are kept together, so a
    /// batch may exceed this by less than one bundle.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub learning_rate: f64,
    /// Draw day bundles with replacement, weighted by inverse class
    /// frequency of their targets. Otherwise every bundle once, shuffled.
    pub weighted_sampling: bool,
    /// Targets drawn per epoch under weighted sampling; defaults to the
    /// number of fit targets.
    pub epoch_samples: Option<usize>,
    /// Stop as soon as the F1 on the real fit targets at threshold 0.5
    /// reaches this value.
    pub target_train_f1: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            max_epochs: 100,
            patience: 20,
            grad_clip_norm: 1.0,
            learning_rate: 1e-3,
            weighted_sampling: true,
            epoch_samples: None,
            target_train_f1: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(TrainError::Config("batch_size and patience must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.grad_clip_norm > 0.0) {
            return Err(TrainError::Config("learning_rate must be >= 0 and grad_clip_norm > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub max_grad_norm: f64,
    pub train_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stop: StopReason,
    pub steps: u64,
}

fn epoch_order(ds: &SeqDataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if !cfg.weighted_sampling {
        let mut ids: Vec<usize> = (0..ds.bundles.len()).collect();
        ids.shuffle(rng);
        return ids;
    }
    let (mut pos, mut total) = (0usize, 0usize);
    for b in &ds.bundles {
        pos += b.target_labels().filter(|&l| l).count();
        total += b.targets();
    }
    let neg = total - pos;
    let inv = |l: bool| if l { 1.0 / pos.max(1) as f64 } else { 1.0 / neg.max(1) as f64 };
    let weights: Vec<f64> = ds.bundles.iter().map(|b| b.target_labels().map(inv).sum()).collect();
    let dist = WeightedIndex::new(&weights).expect("positive bundle weights");
    let want = cfg.epoch_samples.unwrap_or(total);
    let mut ids = Vec::new();
    let mut drawn = 0;
    while drawn < want {
        let b = dist.sample(rng);
        drawn += ds.bundles[b].targets();
        ids.push(b);
    }
    ids
}

fn chunks(ds: &SeqDataset, order: &[usize], batch_size: usize, with_synthetic: bool) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut n = 0;
    for &b in order {
        cur.push(b);
        n += if with_synthetic { ds.bundles[b].targets() } else { ds.bundles[b].real.len() };
        if n >= batch_size {
            out.push(std::mem::take(&mut cur));
            n = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Probabilities for every real target of `ds`, bundle by bundle.
pub fn predict_dataset(model: &StgtModel, statics: &Matrix, ds: &SeqDataset, batch_size: usize) -> Result<Vec<f64>, TrainError> {
    let order: Vec<usize> = (0..ds.bundles.len()).collect();
    let mut out = Vec::with_capacity(ds.real_targets());
    for ids in chunks(ds, &order, batch_size.max(1), false) {
        let (batch, _) = ds.batch(&ids, false);
        out.extend(model.predict(&batch, statics)?);
    }
    Ok(out)
}

fn mean_loss(model: &StgtModel, statics: &Matrix, ds: &SeqDataset, loss: &LossConfig, batch_size: usize) -> Result<f64, TrainError> {
    let order: Vec<usize> = (0..ds.bundles.len()).collect();
    let (mut total, mut n) = (0.0, 0usize);
    for ids in chunks(ds, &order, batch_size.max(1), false) {
        let (batch, labels) = ds.batch(&ids, false);
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, statics, false)?;
        let l = focal_loss(&mut tape, fwd.probs, &labels, loss)?;
        total += tape.value(l).data()[0] * labels.len() as f64;
        n += labels.len();
    }
    Ok(total / n.max(1) as f64)
}

/// Trains `model` in place and restores the parameters of the best epoch
/// (lowest validation loss, or training loss without `val`).
pub fn train_stgt(
    model: &mut StgtModel,
    statics: &Matrix,
    fit: &SeqDataset,
    val: Option<&SeqDataset>,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<History, TrainError> {
    cfg.validate()?;
    if fit.bundles.is_empty() || fit.targets() == 0 {
        return Err(TrainError::Config("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(fit, cfg, &mut rng);
        let (mut loss_sum, mut seen, mut max_norm) = (0.0, 0usize, 0.0f64);
        for (bi, ids) in chunks(fit, &order, cfg.batch_size, true).into_iter().enumerate() {
            let (batch, labels) = fit.batch(&ids, true);
            let (value, mut grads) = model.loss_and_grads(&batch, statics, &labels, loss)?;
            let norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm);
            if !value.is_finite() || !norm.is_finite() {
                let pos = labels.iter().filter(|&&l| l).count();
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    stats: format!("loss {value}, grad norm {norm}, {} targets ({pos} positive)", labels.len()),
                });
            }
            adam.step(&mut model.params, &grads);
            loss_sum += value * labels.len() as f64;
            seen += labels.len();
            max_norm = max_norm.max(norm);
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = val.map(|v| mean_loss(model, statics, v, loss, cfg.batch_size)).transpose()?;
        let train_f1 = match cfg.target_train_f1 {
            Some(_) => {
                let probs = predict_dataset(model, statics, fit, cfg.batch_size)?;
                Some(confusion(&probs, &fit.real_labels(), 0.5).f1())
            }
            None => None,
        };
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:?} f1 {train_f1:?} |g| {max_norm:.3}");
        epochs.push(EpochStats { epoch, train_loss, val_loss, max_grad_norm: max_norm, train_f1 });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, epoch, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let (Some(target), Some(f1)) = (cfg.target_train_f1, train_f1) {
            if f1 >= target {
                best = (monitored, epoch, model.params.clone());
                stop = StopReason::TargetReached;
                break;
            }
        }
        if since_best >= cfg.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    let (best_loss, best_epoch, params) = best;
    if best_epoch > 0 {
        model.params = params;
    }
    Ok(History { epochs, best_epoch, best_loss, stop, steps: adam.steps() })
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::stgt::ModelConfig;
    use crate::train::Bundle;

    fn tiny(n_days: usize, seed: u64) -> (SeqDataset, ModelConfig) {
        let cfg = ModelConfig { d_model: 16, lookback: 3, f_x: 2, f_z: 1, n_nodes: 2, static_hidden: 4, head_hidden: [8, 4], ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = SeqDataset::new(3, 2);
        for d in 0..n_days {
            let mut real = Vec::new();
            let mut labels = Vec::new();
            for node in 0..2 {
                let hot = rng.gen_bool(0.3);
                let w: Vec<f64> = (0..6).map(|i| if hot && i == 4 { 2.0 } else { rng.gen_range(-0.5..0.5) }).collect();
                real.push(ds.push_sequence(&w, node).unwrap());
                labels.push(hot);
            }
            ds.bundles.push(Bundle {
                day: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(d as u64),
                real,
                labels,
                mask: vec![1.0, 0.0, 0.0, 1.0],
                synthetic: vec![],
            });
        }
        (ds, cfg)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_alone() {
        let (ds, mcfg) = tiny(20, 1);
        let mut m = StgtModel::new(mcfg, 0).unwrap();
        let before = m.params.clone();
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 3, batch_size: 8, ..TrainConfig::default() };
        let h = train_stgt(&mut m, &Matrix::zeros(2, 1), &ds, None, &LossConfig::new(0.3, 2.0, 0.3).unwrap(), &cfg).unwrap();
        assert_eq!(m.params, before);
        assert!(h.steps > 0);
    }

    #[test]
    fn learns_a_planted_window_feature() {
        let (ds, mcfg) = tiny(60, 2);
        let mut m = StgtModel::new(mcfg, 1).unwrap();
        let cfg = TrainConfig { max_epochs: 200, batch_size: 16, learning_rate: 3e-3, target_train_f1: Some(0.99), ..TrainConfig::default() };
        let h = train_stgt(&mut m, &Matrix::zeros(2, 1), &ds, None, &LossConfig::new(0.3, 2.0, 0.3).unwrap(), &cfg).unwrap();
        assert_eq!(h.stop, StopReason::TargetReached, "{:?}", h.epochs.last());
    }

    #[test]
    fn patience_restores_the_best_epoch() {
        let (ds, mcfg) = tiny(30, 3);
        let (val, _) = tiny(30, 4);
        let mut m = StgtModel::new(mcfg, 1).unwrap();
        let cfg = TrainConfig { max_epochs: 40, patience: 2, batch_size: 8, learning_rate: 0.05, ..TrainConfig::default() };
        let lc = LossConfig::new(0.3, 2.0, 0.3).unwrap();
        let statics = Matrix::zeros(2, 1);
        let h = train_stgt(&mut m, &statics, &ds, Some(&val), &lc, &cfg).unwrap();
        let best = h.epochs.iter().map(|e| e.val_loss.unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(h.best_loss, best);
        assert!((mean_loss(&m, &statics, &val, &lc, 8).unwrap() - best).abs() < 1e-12);
        if h.stop == StopReason::Patience {
            assert_eq!(h.epochs.len(), h.best_epoch + 2);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, mcfg) = tiny(20, 5);
        let cfg = TrainConfig { max_epochs: 3, batch_size: 8, ..TrainConfig::default() };
        let lc = LossConfig::new(0.3, 2.0, 0.3).unwrap();
        let run = || {
            let mut m = StgtModel::new(mcfg.clone(), 2).unwrap();
            train_stgt(&mut m, &Matrix::zeros(2, 1), &ds, None, &lc, &cfg).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bundles_are_never_split_and_weighting_favours_positives() {
        let (ds, _) = tiny(200, 6);
        let cfg = TrainConfig { batch_size: 10, ..TrainConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let order = epoch_order(&ds, &cfg, &mut rng);
        let drawn: Vec<bool> = order.iter().flat_map(|&b| ds.bundles[b].target_labels()).collect();
        let share = drawn.iter().filter(|&&l| l).count() as f64 / drawn.len() as f64;
        assert!(share > ds.positive_share() + 0.05, "{share} vs {}", ds.positive_share());
        for c in chunks(&ds, &order, 10, true) {
            let n: usize = c.iter().map(|&b| ds.bundles[b].targets()).sum();
            assert!(n < 10 + 2);
        }
    }
}
