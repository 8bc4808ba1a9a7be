//! Failure event logs, gap-free daily series, look-back windows and the
//! synthetic grid generator.

mod events;
mod series;
mod synth;

pub use events::{read_events_csv, write_events_csv, EventLog, EventRecord, RejectedRow};
pub use series::{
    aggregate_daily, filter_substations, make_windows, read_series_csv, write_series_csv, DailySeries, FilterRule,
    Sample,
};
pub use synth::{read_sites_csv, synth_generate, write_sites_csv, SiteMeta, SynthConfig, SynthDataset, VOLTAGE_CLASSES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid period: {0}")]
    Period(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Locates the named columns in a CSV header.
pub(crate) fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}
