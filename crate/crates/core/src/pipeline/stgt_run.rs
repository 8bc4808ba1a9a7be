use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError, PredictionRow, Prepared};
use crate::augment::{balance_to_ratio, AugRow, AugmentSummary, Partition};
use crate::autodiff::{Matrix, Tape};
use crate::features::{encode_temporal, encode_window, is_discrete_temporal, Scaler, ScalerKind, F_X};
use crate::graph::Adjacency;
use crate::ingest::{DailySeries, Sample};
use crate::stgt::{LossConfig, ModelConfig, StgtModel};
use crate::train::{predict_dataset, train_stgt, Bundle, History, SeqDataset, SyntheticMember};

const TIME_COUNTER: usize = 22;

/// Fitted preprocessing needed to score new windows with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub node_ids: Vec<String>,
    /// First day of each node's series; the temporal counter starts there.
    pub series_start: Vec<NaiveDate>,
    pub lookback: usize,
    pub temporal_scaler: Scaler,
    /// Static pool columns used, with their names.
    pub static_columns: Vec<usize>,
    pub static_names: Vec<String>,
    pub static_scaler: Scaler,
    /// Scaled static matrix, one row per node.
    pub statics: Matrix,
    pub edges: Vec<(usize, usize)>,
    /// Feed the days-since-start counter; when off the column is zero.
    pub time_counter: bool,
    /// Feed the day-of-year, weekday, month and weekend columns; when off
    /// they are zero.
    pub calendar: bool,
}

impl Preprocess {
    pub fn adjacency(&self) -> Result<Adjacency, PipelineError> {
        Ok(Adjacency::from_edges(self.node_ids.len(), &self.edges)?)
    }

    /// Scaled, flattened `L × F_x` window of a sample.
    pub fn encode(&self, sample: &Sample, node: usize) -> Result<Vec<f64>, PipelineError> {
        let mut out = Vec::with_capacity(self.lookback * F_X);
        for mut row in encode_window(sample, self.series_start[node]) {
            self.temporal_scaler.transform_row(&mut row)?;
            self.mask_row(&mut row);
            out.extend_from_slice(&row);
        }
        Ok(out)
    }

    fn mask_row(&self, row: &mut [f64; F_X]) {
        if !self.time_counter {
            row[TIME_COUNTER] = 0.0;
        }
        if !self.calendar {
            row[1..TIME_COUNTER].iter_mut().for_each(|v| *v = 0.0);
            row[F_X - 1] = 0.0;
        }
    }
}

/// Fits the temporal robust scaler on every training-year day of the
/// non-held-out nodes and the static standard scaler on their static rows.
pub fn fit_preprocess(prep: &Prepared, cfg: &PipelineConfig, static_columns: &[usize]) -> Result<Preprocess, PipelineError> {
    let train_end = cfg.split.train_end();
    let train_start = NaiveDate::from_ymd_opt(cfg.split.train_years.0, 1, 1).expect("valid year");
    let held = prep.holdout_nodes(&cfg.split.holdout);
    let mut day_rows = Vec::new();
    for (s, _) in prep.series.iter().zip(&held).filter(|(_, &h)| !h) {
        for (i, &c) in s.counts.iter().enumerate() {
            let date = s.date(i);
            if date >= train_start && date <= train_end {
                day_rows.push(encode_temporal(c, date, i as f64).to_vec());
            }
        }
    }
    let mut temporal_scaler = Scaler::new(ScalerKind::Robust);
    temporal_scaler.fit(&day_rows)?;

    let table = prep.pool.select_columns(static_columns);
    let fit_rows: Vec<Vec<f64>> = table.rows.iter().zip(&held).filter(|(_, &h)| !h).map(|(r, _)| r.clone()).collect();
    let mut static_scaler = Scaler::new(ScalerKind::Standard);
    static_scaler.fit(&fit_rows)?;
    let scaled = static_scaler.transform(&table.rows)?;
    let statics = Matrix::from_rows(&scaled)?;
    Ok(Preprocess {
        node_ids: prep.node_ids(),
        series_start: prep.series.iter().map(|s| s.start).collect(),
        lookback: cfg.features.lookback,
        temporal_scaler,
        static_columns: static_columns.to_vec(),
        static_names: table.names,
        static_scaler,
        statics,
        edges: prep.graph.adjacency.edges(),
        time_counter: cfg.features.time_counter,
        calendar: cfg.features.calendar,
    })
}

/// Groups samples into day bundles (nodes ascending within a day).
/// Returns the dataset and the sample index behind every real target, in
/// prediction order.
fn bundle_samples(
    samples: &[(&Sample, usize)],
    pre: &Preprocess,
    adjacency: &Adjacency,
) -> Result<(SeqDataset, Vec<usize>, Vec<(usize, usize)>), PipelineError> {
    let mut by_day: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (k, (s, _)) in samples.iter().enumerate() {
        by_day.entry(s.day).or_default().push(k);
    }
    let mut ds = SeqDataset::new(pre.lookback, F_X);
    let mut order = Vec::with_capacity(samples.len());
    let mut slot_of_seq = Vec::with_capacity(samples.len());
    for (day, mut members) in by_day {
        members.sort_by_key(|&k| samples[k].1);
        let nodes: Vec<usize> = members.iter().map(|&k| samples[k].1).collect();
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::Data(format!("two samples of one substation on {day}")));
        }
        let b = ds.bundles.len();
        let mut real = Vec::with_capacity(members.len());
        for (slot, &k) in members.iter().enumerate() {
            let (sample, node) = samples[k];
            real.push(ds.push_sequence(&pre.encode(sample, node)?, node)?);
            slot_of_seq.push((b, slot));
        }
        ds.bundles.push(Bundle {
            day,
            real,
            labels: members.iter().map(|&k| samples[k].0.label).collect(),
            mask: adjacency.sub_mask(&nodes),
            synthetic: Vec::new(),
        });
        order.extend(members);
    }
    Ok((ds, order, slot_of_seq))
}

/// Builds the dataset of the samples `ids`. With `augment`, synthetic
/// positives are generated from the flattened windows and attached to the
/// bundle and slot of their parent sequence.
pub fn build_dataset(
    prep: &Prepared,
    pre: &Preprocess,
    ids: &[usize],
    augment: Option<&crate::augment::AugmentConfig>,
) -> Result<(SeqDataset, Vec<usize>, Option<AugmentSummary>), PipelineError> {
    let adjacency = prep.graph.adjacency.clone();
    let samples: Vec<(&Sample, usize)> = ids.iter().map(|&i| (&prep.samples[i], prep.sample_node[i])).collect();
    let (mut ds, order, slot_of_seq) = bundle_samples(&samples, pre, &adjacency)?;
    let order: Vec<usize> = order.into_iter().map(|k| ids[k]).collect();
    let Some(aug) = augment else {
        return Ok((ds, order, None));
    };
    let real = ds.sequences();
    let rows: Vec<AugRow> = (0..real)
        .map(|seq| {
            let (b, slot) = slot_of_seq[seq];
            AugRow::original(ds.window(seq).to_vec(), ds.bundles[b].labels[slot], Partition::Train)
        })
        .collect();
    let discrete: Vec<bool> = (0..pre.lookback * F_X).map(|c| is_discrete_temporal(c % F_X)).collect();
    let (out, summary) = balance_to_ratio(&rows, &discrete, aug)?;
    for row in &out[real..] {
        let parent = row.parent.expect("synthetic rows have a parent");
        let (b, slot) = slot_of_seq[parent];
        let seq = ds.push_sequence(&row.features, ds.nodes[parent])?;
        ds.bundles[b].synthetic.push(SyntheticMember { seq, slot, label: row.label });
    }
    Ok((ds, order, Some(summary)))
}

#[derive(Clone, Debug)]
pub struct StgtRun {
    pub model: StgtModel,
    pub preprocess: Preprocess,
    pub history: History,
    pub loss: LossConfig,
    pub augment: AugmentSummary,
    /// Validation and test predictions.
    pub predictions: Vec<PredictionRow>,
}

fn prediction_rows(prep: &Prepared, order: &[usize], probs: &[f64], split: &str) -> Vec<PredictionRow> {
    order
        .iter()
        .zip(probs)
        .map(|(&i, &p)| PredictionRow {
            substation_id: prep.samples[i].substation_id.clone(),
            date: prep.label_dates[i],
            split: split.into(),
            label: prep.samples[i].label,
            probability: p,
        })
        .collect()
}

/// Scores a split of samples with a trained model.
pub fn score_samples(
    prep: &Prepared,
    pre: &Preprocess,
    model: &StgtModel,
    ids: &[usize],
    split: &str,
    batch_size: usize,
) -> Result<Vec<PredictionRow>, PipelineError> {
    let (ds, order, _) = build_dataset(prep, pre, ids, None)?;
    let probs = predict_dataset(model, &pre.statics, &ds, batch_size)?;
    Ok(prediction_rows(prep, &order, &probs, split))
}

/// Full ST-GT run: preprocessing, augmentation, training, held-out
/// embeddings and validation/test scoring.
pub fn run_stgt(prep: &Prepared, cfg: &PipelineConfig, static_columns: &[usize]) -> Result<StgtRun, PipelineError> {
    let pre = fit_preprocess(prep, cfg, static_columns)?;
    let train_ids = &prep.partitions.train;
    let positives = train_ids.iter().filter(|&&i| prep.samples[i].label).count();
    if positives == 0 {
        return Err(PipelineError::Data("no positive training samples".into()));
    }
    let ratio = positives as f64 / train_ids.len() as f64;
    let loss = LossConfig::new(cfg.loss.alpha, cfg.loss.gamma, ratio)?;
    let (fit, _, summary) = build_dataset(prep, &pre, train_ids, Some(&cfg.augment))?;
    let (val, _, _) = build_dataset(prep, &pre, &prep.partitions.val, None)?;

    let model_cfg = ModelConfig {
        f_x: F_X,
        f_z: static_columns.len(),
        n_nodes: prep.sites.len(),
        lookback: cfg.features.lookback,
        ..cfg.model.clone()
    };
    let mut model = StgtModel::new(model_cfg, cfg.seed_for("model"))?;
    let history = train_stgt(&mut model, &pre.statics, &fit, Some(&val), &loss, &cfg.train)?;
    mean_embed_holdout(&mut model, &prep.holdout_nodes(&cfg.split.holdout));

    let mut predictions = score_samples(prep, &pre, &model, &prep.partitions.val, "val", cfg.train.batch_size)?;
    predictions.extend(score_samples(prep, &pre, &model, &prep.partitions.test, "test", cfg.train.batch_size)?);
    Ok(StgtRun { model, preprocess: pre, history, loss, augment: summary.expect("augmented"), predictions })
}

/// Held-out substations never receive gradient; their embeddings are set to
/// the mean of the trained ones.
fn mean_embed_holdout(model: &mut StgtModel, held: &[bool]) {
    if !held.iter().any(|&h| h) || held.iter().all(|&h| h) {
        return;
    }
    let e = model.params.get_mut("E").expect("node embedding");
    let trained: Vec<usize> = (0..held.len()).filter(|&i| !held[i]).collect();
    let d = e.cols();
    let mut mean = vec![0.0; d];
    for &i in &trained {
        for (m, v) in mean.iter_mut().zip(e.row(i)) {
            *m += v / trained.len() as f64;
        }
    }
    for i in (0..held.len()).filter(|&i| held[i]) {
        e.row_mut(i).copy_from_slice(&mean);
    }
}

/// The day group of every node whose series covers the `lookback` days
/// ending at `day`, with node ids in bundle order.
fn day_bundle(pre: &Preprocess, series: &[DailySeries], day: NaiveDate) -> Result<Option<(SeqDataset, Vec<String>)>, PipelineError> {
    let adjacency = pre.adjacency()?;
    let first = day - Days::new(pre.lookback as u64 - 1);
    let mut samples = Vec::new();
    for s in series {
        let Some(node) = pre.node_ids.iter().position(|id| id == &s.substation_id) else {
            log::warn!("{} is not part of the trained graph; skipped", s.substation_id);
            continue;
        };
        let (Some(a), Some(b)) = (s.index_of(first), s.index_of(day)) else { continue };
        samples.push((
            Sample { substation_id: s.substation_id.clone(), day, window: s.counts[a..=b].to_vec(), label: false },
            node,
        ));
    }
    if samples.is_empty() {
        return Ok(None);
    }
    let refs: Vec<(&Sample, usize)> = samples.iter().map(|(s, n)| (s, *n)).collect();
    let (ds, order, _) = bundle_samples(&refs, pre, &adjacency)?;
    let ids = order.into_iter().map(|k| samples[k].0.substation_id.clone()).collect();
    Ok(Some((ds, ids)))
}

/// Next-day probabilities for every node whose series covers the
/// `lookback` days ending at `day`. All such nodes form one day group.
pub fn predict_day(
    model: &StgtModel,
    pre: &Preprocess,
    series: &[DailySeries],
    day: NaiveDate,
) -> Result<Vec<(String, f64)>, PipelineError> {
    let Some((ds, ids)) = day_bundle(pre, series, day)? else { return Ok(Vec::new()) };
    let probs = predict_dataset(model, &pre.statics, &ds, usize::MAX)?;
    Ok(ids.into_iter().zip(probs).collect())
}

/// Masked spatial attention weights of the day group ending at `day`,
/// row-major over the returned node ids.
pub fn day_attention(
    model: &StgtModel,
    pre: &Preprocess,
    series: &[DailySeries],
    day: NaiveDate,
) -> Result<(Vec<String>, Vec<f64>), PipelineError> {
    let Some((ds, ids)) = day_bundle(pre, series, day)? else { return Ok((Vec::new(), Vec::new())) };
    let (batch, _) = ds.batch(&[0], false);
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &batch, &pre.statics, false)?;
    Ok((ids, tape.value(fwd.spatial_weights[0]).data().to_vec()))
}
