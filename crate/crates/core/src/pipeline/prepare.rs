use std::collections::HashMap;

use chrono::NaiveDate;

use super::{PipelineConfig, PipelineError};
use crate::features::{select_features, static_pool, Selection, StaticTable};
use crate::graph::{topo_features, GridGraph, TopoFeatures};
use crate::ingest::{aggregate_daily, filter_substations, make_windows, DailySeries, EventRecord, Sample, SiteMeta};
use crate::train::{temporal_split, Partitions};

/// Everything derived from the raw inputs before any model is fitted.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Modelled substations in node order.
    pub sites: Vec<SiteMeta>,
    pub series: Vec<DailySeries>,
    pub graph: GridGraph,
    pub topo: TopoFeatures,
    /// Full static pool, one row per node.
    pub pool: StaticTable,
    pub samples: Vec<Sample>,
    pub sample_node: Vec<usize>,
    pub label_dates: Vec<NaiveDate>,
    pub partitions: Partitions,
}

impl Prepared {
    pub fn node_ids(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.substation_id.clone()).collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<bool> {
        idx.iter().map(|&i| self.samples[i].label).collect()
    }

    pub fn holdout_nodes(&self, holdout: &[String]) -> Vec<bool> {
        self.sites.iter().map(|s| holdout.contains(&s.substation_id)).collect()
    }
}

/// Daily counts per substation, filtered by the minimum-history rule.
/// Daily series over the configured period, or over the span of the whole
/// log so every substation ends on the same day.
pub fn ingest_events(events: &[EventRecord], cfg: &PipelineConfig) -> Result<Vec<DailySeries>, PipelineError> {
    let period = match cfg.ingest.period()? {
        Some(p) => Some(p),
        None => events.iter().map(EventRecord::date).min().zip(events.iter().map(EventRecord::date).max()),
    };
    let all = aggregate_daily(events, period)?;
    let before = all.len();
    let kept = filter_substations(all, &cfg.ingest.rule());
    log::info!("{} of {before} substations pass the history filter", kept.len());
    Ok(kept)
}

/// Aligns sites with their (already filtered) series, builds the proximity
/// graph, the static pool and the windowed samples, and splits them.
pub fn prepare(sites: &[SiteMeta], series: &[DailySeries], cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let by_id: HashMap<&str, &DailySeries> = series.iter().map(|s| (s.substation_id.as_str(), s)).collect();
    let known: HashMap<&str, ()> = sites.iter().map(|s| (s.substation_id.as_str(), ())).collect();
    if let Some(orphan) = series.iter().find(|s| !known.contains_key(s.substation_id.as_str())) {
        return Err(PipelineError::Data(format!("series {} has no site metadata", orphan.substation_id)));
    }
    let mut kept_sites = Vec::new();
    let mut kept_series = Vec::new();
    for site in sites {
        match by_id.get(site.substation_id.as_str()) {
            Some(s) => {
                kept_sites.push(site.clone());
                kept_series.push((*s).clone());
            }
            None => log::info!("{} has no series after filtering; dropped", site.substation_id),
        }
    }
    if kept_sites.len() < 2 {
        return Err(PipelineError::Data(format!("{} substations left to model; need at least 2", kept_sites.len())));
    }
    for h in &cfg.split.holdout {
        if !kept_sites.iter().any(|s| &s.substation_id == h) {
            return Err(PipelineError::Config(format!("held-out substation {h} is not modelled")));
        }
    }
    let graph = GridGraph::build(kept_sites.iter().map(SiteMeta::coord).collect(), cfg.graph.tau_km)?;
    let topo = topo_features(&graph.adjacency)?;
    let pool = static_pool(&kept_sites, &topo, &kept_series, cfg.split.train_end())?;

    let mut samples = Vec::new();
    let mut sample_node = Vec::new();
    for (node, s) in kept_series.iter().enumerate() {
        let w = make_windows(s, cfg.features.lookback);
        sample_node.extend(std::iter::repeat(node).take(w.len()));
        samples.extend(w);
    }
    let label_dates: Vec<NaiveDate> = samples.iter().map(Sample::label_date).collect();
    let ids: Vec<&str> = samples.iter().map(|s| s.substation_id.as_str()).collect();
    let partitions = temporal_split(&label_dates, &ids, &cfg.split)?;
    log::info!(
        "{} nodes, {} edges, {} samples (train {}, val {}, test {})",
        kept_sites.len(),
        graph.adjacency.edges().len(),
        samples.len(),
        partitions.train.len(),
        partitions.val.len(),
        partitions.test.len()
    );
    Ok(Prepared { sites: kept_sites, series: kept_series, graph, topo, pool, samples, sample_node, label_dates, partitions })
}

/// Bootstrap selection over the enabled static columns, on one row per
/// training sample. Returned indices refer to the full pool.
pub fn run_selection(prep: &Prepared, cfg: &PipelineConfig) -> Result<(Vec<usize>, Selection), PipelineError> {
    let candidates = cfg.features.groups.static_columns();
    let table = prep.pool.select_columns(&candidates);
    let x: Vec<Vec<f64>> = prep.partitions.train.iter().map(|&i| table.rows[prep.sample_node[i]].clone()).collect();
    let y = prep.labels(&prep.partitions.train);
    let sel = select_features(&x, &y, &table.names, &cfg.select, cfg.seed_for("select"))?;
    Ok((sel.selected.iter().map(|&c| candidates[c]).collect(), sel))
}

/// Pool columns fed to the models. Selection only runs when it can drop
/// something, i.e. when more candidates are enabled than `top_k`.
pub fn static_selection(prep: &Prepared, cfg: &PipelineConfig) -> Result<Vec<usize>, PipelineError> {
    let candidates = cfg.features.groups.static_columns();
    if !cfg.features.select || candidates.len() <= cfg.select.top_k {
        return Ok(candidates);
    }
    Ok(run_selection(prep, cfg)?.0)
}
