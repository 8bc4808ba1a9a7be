use std::collections::HashMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::graph::TopoFeatures;
use crate::ingest::{DailySeries, SiteMeta, VOLTAGE_CLASSES};

pub const STATIC_NAMES: [&str; 15] = [
    "degree", "betweenness", "closeness", "pagerank", "clustering",
    "lat", "lon",
    "V69", "V138", "V345",
    "connections",
    "mean_daily", "max_daily", "active_fraction", "count_variance",
];

/// Voltage one-hot columns of the static pool.
pub const STATIC_DISCRETE: [usize; 3] = [7, 8, 9];

/// Feature-group toggles.
///
/// `temporal` covers the window encodings and the historical aggregates,
/// `spatial` the coordinates, `topology` the centralities and connection
/// count. `cause` has no columns yet. Voltage one-hots are always kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureGroups {
    pub temporal: bool,
    pub spatial: bool,
    pub topology: bool,
    pub cause: bool,
}

impl Default for FeatureGroups {
    fn default() -> Self {
        Self { temporal: true, spatial: true, topology: true, cause: true }
    }
}

impl FeatureGroups {
    /// Static-pool columns enabled by these toggles, ascending.
    pub fn static_columns(&self) -> Vec<usize> {
        (0..STATIC_NAMES.len())
            .filter(|&c| match c {
                0..=4 | 10 => self.topology,
                5 | 6 => self.spatial,
                7..=9 => true,
                _ => self.temporal,
            })
            .collect()
    }

    /// Label used in metrics tables, e.g. `temporal_spatial`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [("temporal", self.temporal), ("cause", self.cause), ("spatial", self.spatial), ("topology", self.topology)]
            .into_iter()
            .filter_map(|(n, on)| on.then_some(n))
            .collect();
        if parts.is_empty() { "static".into() } else { parts.join("_") }
    }
}

/// One static vector per substation, in site order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticTable {
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl StaticTable {
    pub fn select_columns(&self, cols: &[usize]) -> StaticTable {
        StaticTable {
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            ids: self.ids.clone(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
        }
    }

    pub fn row_of(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|s| s == id).map(|i| self.rows[i].as_slice())
    }
}

/// Builds the 15-feature static pool. Historical aggregates only look at days
/// up to and including `train_end`.
pub fn static_pool(
    sites: &[SiteMeta],
    topo: &TopoFeatures,
    series: &[DailySeries],
    train_end: NaiveDate,
) -> Result<StaticTable, FeatureError> {
    if topo.degree.len() != sites.len() {
        return Err(FeatureError::Shape { expected: sites.len(), got: topo.degree.len() });
    }
    let by_id: HashMap<&str, &DailySeries> = series.iter().map(|s| (s.substation_id.as_str(), s)).collect();
    let mut rows = Vec::with_capacity(sites.len());
    for (i, site) in sites.iter().enumerate() {
        let s = by_id.get(site.substation_id.as_str()).ok_or_else(|| FeatureError::MissingSeries(site.substation_id.clone()))?;
        let history: Vec<f64> = s
            .counts
            .iter()
            .enumerate()
            .take_while(|(k, _)| s.date(*k) <= train_end)
            .map(|(_, &c)| f64::from(c))
            .collect();
        if history.is_empty() {
            return Err(FeatureError::Config(format!("{} has no days on or before {train_end}", site.substation_id)));
        }
        let n = history.len() as f64;
        let mean = history.iter().sum::<f64>() / n;
        let max = history.iter().copied().fold(0.0, f64::max);
        let active = history.iter().filter(|&&c| c > 0.0).count() as f64 / n;
        let var = history.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        let mut row = topo.row(i).to_vec();
        row.extend([site.lat, site.lon]);
        row.extend(VOLTAGE_CLASSES.iter().map(|&v| f64::from(u8::from(site.voltage_class == v))));
        row.push(f64::from(site.connection_count));
        row.extend([mean, max, active, var]);
        rows.push(row);
    }
    Ok(StaticTable {
        names: STATIC_NAMES.iter().map(|s| s.to_string()).collect(),
        ids: sites.iter().map(|s| s.substation_id.clone()).collect(),
        rows,
    })
}
