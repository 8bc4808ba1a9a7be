use super::{FeatureSettings, PipelineConfig, PipelineError, PredictionRow, Prepared};
use crate::features::{encode_temporal, TEMPORAL_NAMES};
use crate::trees::{fit_gbt, predict_gbt, GbtModel};

/// Calendar columns of the temporal encoding given to the baseline: the
/// day-of-year sinusoids, weekday and month one-hots and the weekend flag.
const CALENDAR: std::ops::Range<usize> = 1..22;
const WEEKEND: usize = 23;

/// Column names of [`gbt_rows`]: the window's log counts, oldest first,
/// the last day's calendar columns when the temporal group and the calendar
/// encoding are on, then the static columns.
pub fn gbt_feature_names(features: &FeatureSettings, static_names: &[String]) -> Vec<String> {
    let lookback = features.lookback;
    let mut names: Vec<String> = (0..lookback).map(|k| format!("log_count_lag{}", lookback - 1 - k)).collect();
    if features.groups.temporal && features.calendar {
        names.extend(CALENDAR.chain([WEEKEND]).map(|c| TEMPORAL_NAMES[c].to_string()));
    }
    names.extend(static_names.iter().cloned());
    names
}

/// Flat baseline features for the samples `ids`.
pub fn gbt_rows(prep: &Prepared, ids: &[usize], features: &FeatureSettings, static_columns: &[usize]) -> Vec<Vec<f64>> {
    ids.iter()
        .map(|&i| {
            let s = &prep.samples[i];
            let mut row: Vec<f64> = s.window.iter().map(|&c| f64::from(c).ln_1p()).collect();
            if features.groups.temporal && features.calendar {
                let enc = encode_temporal(0, s.day, 0.0);
                row.extend(CALENDAR.chain([WEEKEND]).map(|c| enc[c]));
            }
            let stat = &prep.pool.rows[prep.sample_node[i]];
            row.extend(static_columns.iter().map(|&c| stat[c]));
            row
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GbtRun {
    pub model: GbtModel,
    pub feature_names: Vec<String>,
    /// Training logistic loss after each round.
    pub trace: Vec<f64>,
    pub predictions: Vec<PredictionRow>,
}

/// Boosted-tree baseline on the unaugmented training split.
pub fn run_gbt(prep: &Prepared, cfg: &PipelineConfig, static_columns: &[usize]) -> Result<GbtRun, PipelineError> {
    let features = &cfg.features;
    let x = gbt_rows(prep, &prep.partitions.train, features, static_columns);
    let y = prep.labels(&prep.partitions.train);
    let (model, trace) = fit_gbt(&x, &y, &cfg.gbt, cfg.seed_for("gbt"))?;
    let mut predictions = Vec::new();
    for (split, ids) in [("val", &prep.partitions.val), ("test", &prep.partitions.test)] {
        let probs = predict_gbt(&model, &gbt_rows(prep, ids, features, static_columns))?;
        predictions.extend(ids.iter().zip(probs).map(|(&i, p)| PredictionRow {
            substation_id: prep.samples[i].substation_id.clone(),
            date: prep.label_dates[i],
            split: split.into(),
            label: prep.samples[i].label,
            probability: p,
        }));
    }
    let names: Vec<String> = static_columns.iter().map(|&c| prep.pool.names[c].clone()).collect();
    Ok(GbtRun { model, feature_names: gbt_feature_names(features, &names), trace, predictions })
}
