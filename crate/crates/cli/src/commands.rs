use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use stgt_core::features::{write_importance_csv, STATIC_NAMES};
use stgt_core::graph::{topo_features, write_edges_csv, write_features_csv, GridGraph};
use stgt_core::ingest::{
    read_events_csv, read_series_csv, read_sites_csv, synth_generate, write_events_csv, write_series_csv, write_sites_csv, DailySeries,
    SiteMeta,
};
use stgt_core::pipeline::{
    day_attention, evaluate_predictions, ingest_events, predict_day, prepare, read_json, read_predictions_csv, read_text, run_gbt,
    run_selection, run_stgt, static_selection, write_json, write_predictions_csv, write_text, PipelineConfig, Preprocess, Prepared,
};
use stgt_core::stgt::{write_attention_csv, Checkpoint, StgtModel};

use crate::{Common, Inputs};

/// Which model produced a run directory.
#[derive(Serialize, Deserialize)]
struct RunInfo {
    model: String,
    feature_set: String,
    seed: u64,
}

pub fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::from_toml(&read_text(path)?).with_context(|| format!("{}", path.display()))?,
        None => PipelineConfig::default(),
    };
    let g = &mut cfg.features.groups;
    for (flag, slot) in [
        (common.temporal, &mut g.temporal),
        (common.spatial, &mut g.spatial),
        (common.topology, &mut g.topology),
        (common.cause, &mut g.cause),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(v) = common.calendar {
        cfg.features.calendar = v;
    }
    if let Some(v) = common.time_counter {
        cfg.features.time_counter = v;
    }
    Ok(cfg.with_seed(common.seed.unwrap_or(cfg.seed)))
}

/// Creates `out` and records the resolved configuration in it.
fn artifact_dir(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn load_sites(path: &Path) -> Result<Vec<SiteMeta>> {
    read_sites_csv(open(path)?).with_context(|| format!("{}", path.display()))
}

fn load_series(path: &Path) -> Result<Vec<DailySeries>> {
    read_series_csv(open(path)?).with_context(|| format!("{}", path.display()))
}

fn load_prepared(cfg: &PipelineConfig, inputs: &Inputs) -> Result<Prepared> {
    let sites = load_sites(&inputs.sites)?;
    let series = load_series(&inputs.series)?;
    Ok(prepare(&sites, &series, cfg)?)
}

/// Pool columns from a `selected.csv`, or the enabled groups.
fn static_columns(cfg: &PipelineConfig, prep: &Prepared, selection: Option<&Path>) -> Result<Vec<usize>> {
    let Some(path) = selection else { return Ok(static_selection(prep, cfg)?) };
    let mut r = csv::Reader::from_reader(open(path)?);
    let headers = r.headers().with_context(|| format!("{}", path.display()))?.clone();
    let col = headers.iter().position(|h| h == "feature").with_context(|| format!("{}: missing column `feature`", path.display()))?;
    let mut cols = Vec::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("{}", path.display()))?;
        let name = rec.get(col).unwrap_or("");
        match STATIC_NAMES.iter().position(|n| *n == name) {
            Some(c) => cols.push(c),
            None => bail!("{}: unknown feature `{name}`", path.display()),
        }
    }
    if cols.is_empty() {
        bail!("{}: no features selected", path.display());
    }
    cols.sort_unstable();
    cols.dedup();
    Ok(cols)
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    artifact_dir(cfg, out)?;
    let data = synth_generate(&cfg.synth)?;
    write_sites_csv(&data.sites, create(&out.join("sites.csv"))?)?;
    write_events_csv(&data.events, create(&out.join("events.csv"))?)?;
    log::info!("{} substations, {} events in {}", data.sites.len(), data.events.len(), out.display());
    Ok(())
}

pub fn ingest(cfg: &PipelineConfig, events: &Path, out: &Path) -> Result<()> {
    let log = read_events_csv(open(events)?).with_context(|| format!("{}", events.display()))?;
    artifact_dir(cfg, out)?;
    let mut w = csv_writer(&out.join("rejected.csv"))?;
    w.write_record(["line", "reason"])?;
    for r in &log.rejected {
        w.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    if !log.rejected.is_empty() {
        log::warn!("{} rows rejected, see rejected.csv", log.rejected.len());
    }
    let series = ingest_events(&log.records, cfg)?;
    write_series_csv(&series, create(&out.join("series.csv"))?)?;
    log::info!("{} substations kept", series.len());
    Ok(())
}

pub fn graph(cfg: &PipelineConfig, inputs: &Inputs, out: &Path) -> Result<()> {
    let sites = load_sites(&inputs.sites)?;
    let series = load_series(&inputs.series)?;
    let kept: Vec<&SiteMeta> = sites.iter().filter(|s| series.iter().any(|x| x.substation_id == s.substation_id)).collect();
    artifact_dir(cfg, out)?;
    let names: Vec<String> = kept.iter().map(|s| s.substation_id.clone()).collect();
    let graph = GridGraph::build(kept.iter().map(|s| s.coord()).collect(), cfg.graph.tau_km)?;
    let topo = topo_features(&graph.adjacency)?;
    write_edges_csv(&graph.adjacency, &names, create(&out.join("edges.csv"))?)?;
    write_features_csv(&topo, &names, create(&out.join("topology.csv"))?)?;
    log::info!("{} nodes, mean degree {:.2}", names.len(), graph.adjacency.mean_degree());
    Ok(())
}

pub fn featurize(cfg: &PipelineConfig, inputs: &Inputs, out: &Path) -> Result<()> {
    let prep = load_prepared(cfg, inputs)?;
    artifact_dir(cfg, out)?;

    let mut w = csv_writer(&out.join("static_pool.csv"))?;
    w.write_record(std::iter::once("substation_id").chain(prep.pool.names.iter().map(String::as_str)))?;
    for (id, row) in prep.pool.ids.iter().zip(&prep.pool.rows) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(f64::to_string)))?;
    }
    w.flush()?;

    let mut split = vec![""; prep.samples.len()];
    for (name, ids) in [("train", &prep.partitions.train), ("val", &prep.partitions.val), ("test", &prep.partitions.test)] {
        for &i in ids {
            split[i] = name;
        }
    }
    let mut w = csv_writer(&out.join("samples.csv"))?;
    w.write_record(["substation_id", "window_end", "label_date", "split", "label"])?;
    for (i, s) in prep.samples.iter().enumerate() {
        w.write_record([s.substation_id.clone(), s.day.to_string(), prep.label_dates[i].to_string(), split[i].into(), s.label.to_string()])?;
    }
    w.flush()?;

    let mut w = csv_writer(&out.join("disturbance_counts.csv"))?;
    w.write_record(["substation_id", "days", "failure_days", "events"])?;
    for s in &prep.series {
        let failure_days = s.counts.iter().filter(|&&c| c > 0).count();
        w.write_record([s.substation_id.clone(), s.len().to_string(), failure_days.to_string(), s.total().to_string()])?;
    }
    w.flush()?;
    log::info!(
        "{} samples: {} train, {} val, {} test",
        prep.samples.len(),
        prep.partitions.train.len(),
        prep.partitions.val.len(),
        prep.partitions.test.len()
    );
    Ok(())
}

pub fn select(cfg: &PipelineConfig, inputs: &Inputs, out: &Path) -> Result<()> {
    let prep = load_prepared(cfg, inputs)?;
    artifact_dir(cfg, out)?;
    let (cols, sel) = run_selection(&prep, cfg)?;
    write_importance_csv(&sel.report, create(&out.join("importance.csv"))?)?;
    let mut w = csv_writer(&out.join("selected.csv"))?;
    w.write_record(["feature"])?;
    for &c in &cols {
        w.write_record([STATIC_NAMES[c]])?;
    }
    w.flush()?;
    log::info!("{} of {} features selected", cols.len(), sel.report.len());
    Ok(())
}

fn write_attention(path: &Path, ids: &[String], weights: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(stgt_core::stgt::ATTENTION_HEADER)?;
    if !ids.is_empty() {
        write_attention_csv(&mut w, "spatial", weights, 1, ids)?;
    }
    w.flush()?;
    Ok(())
}

pub fn train_stgt(cfg: &PipelineConfig, inputs: &Inputs, selection: Option<&Path>, out: &Path) -> Result<()> {
    let prep = load_prepared(cfg, inputs)?;
    let cols = static_columns(cfg, &prep, selection)?;
    artifact_dir(cfg, out)?;
    let run = run_stgt(&prep, cfg, &cols)?;
    let ck = Checkpoint::new(run.model.config.clone(), run.model.params.clone());
    write_text(&out.join("checkpoint.json"), &ck.to_json()?)?;
    write_json(&out.join("preprocess.json"), &run.preprocess)?;
    write_json(&out.join("history.json"), &run.history)?;
    write_json(&out.join("augment.json"), &run.augment)?;
    write_predictions_csv(&out.join("predictions.csv"), &run.predictions)?;
    let info = RunInfo { model: "stgt".into(), feature_set: cfg.features.groups.label(), seed: cfg.seed };
    write_json(&out.join("run.json"), &info)?;

    if let Some(last) = prep.partitions.test.iter().map(|&i| prep.samples[i].day).max() {
        let (ids, w) = day_attention(&run.model, &run.preprocess, &prep.series, last)?;
        write_attention(&out.join("attention.csv"), &ids, &w)?;
    }
    log::info!(
        "best epoch {} of {} ({:?}), {} predictions",
        run.history.best_epoch,
        run.history.epochs.len(),
        run.history.stop,
        run.predictions.len()
    );
    Ok(())
}

pub fn train_gbt(cfg: &PipelineConfig, inputs: &Inputs, selection: Option<&Path>, out: &Path) -> Result<()> {
    let prep = load_prepared(cfg, inputs)?;
    let cols = static_columns(cfg, &prep, selection)?;
    artifact_dir(cfg, out)?;
    let run = run_gbt(&prep, cfg, &cols)?;
    write_json(&out.join("gbt_model.json"), &run.model)?;
    write_predictions_csv(&out.join("predictions.csv"), &run.predictions)?;
    let mut w = csv_writer(&out.join("trace.csv"))?;
    w.write_record(["round", "train_loss"])?;
    for (i, l) in run.trace.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("features.csv"))?;
    w.write_record(["feature"])?;
    for f in &run.feature_names {
        w.write_record([f])?;
    }
    w.flush()?;
    let info = RunInfo { model: "gbt".into(), feature_set: cfg.features.groups.label(), seed: cfg.seed };
    write_json(&out.join("run.json"), &info)?;
    log::info!("{} rounds, final train loss {:.5}", run.trace.len() - 1, run.trace.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub fn evaluate(cfg: &PipelineConfig, run: &Path, out: &Path) -> Result<()> {
    let info: RunInfo = read_json(&run.join("run.json"))?;
    let rows = read_predictions_csv(&run.join("predictions.csv"))?;
    let metrics = evaluate_predictions(&rows, &info.model, &info.feature_set, &cfg.eval)?;
    artifact_dir(cfg, out)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    let mut w = csv_writer(&out.join("metrics.csv"))?;
    for r in metrics.rows() {
        w.serialize(r)?;
    }
    w.flush()?;
    let t = &metrics.test;
    log::info!(
        "threshold {:.2}: test precision {:.3} recall {:.3} f1 {:.3}",
        metrics.threshold,
        t.precision.value,
        t.recall.value,
        t.f1.value
    );
    Ok(())
}

/// Loads the checkpoint and preprocessing saved by `train-stgt`.
pub fn load_model(run: &Path) -> Result<(StgtModel, Preprocess)> {
    let path: PathBuf = run.join("checkpoint.json");
    let ck = Checkpoint::from_json(&read_text(&path)?).with_context(|| format!("{}", path.display()))?;
    let model = StgtModel::from_parts(ck.config, ck.params)?;
    let pre: Preprocess = read_json(&run.join("preprocess.json"))?;
    Ok((model, pre))
}

pub fn predict(cfg: &PipelineConfig, run: &Path, series: &Path, day: Option<NaiveDate>, out: &Path) -> Result<()> {
    let (model, pre) = load_model(run)?;
    let series = load_series(series)?;
    let day = match day.or_else(|| series.iter().map(DailySeries::end).max()) {
        Some(d) => d,
        None => bail!("the series file has no rows"),
    };
    let probs = predict_day(&model, &pre, &series, day)?;
    if probs.is_empty() {
        bail!("no substation has {} days of history ending {day}", pre.lookback);
    }
    artifact_dir(cfg, out)?;
    let target = day + Days::new(1);
    let mut w = csv_writer(&out.join("predictions.csv"))?;
    w.write_record(["substation_id", "date", "probability"])?;
    for (id, p) in &probs {
        w.write_record([id.clone(), target.to_string(), p.to_string()])?;
    }
    w.flush()?;
    let (ids, weights) = day_attention(&model, &pre, &series, day)?;
    write_attention(&out.join("attention.csv"), &ids, &weights)?;
    log::info!("{} substations scored for {target}", probs.len());
    Ok(())
}
