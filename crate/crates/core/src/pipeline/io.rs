use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::augment::Provenance;
use crate::train::{evaluate, select_threshold, EvalConfig, MetricsReport, MetricsRow};

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |err| PipelineError::Io { path: path.display().to_string(), err }
}

pub(crate) fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PipelineError + '_ {
    move |err| PipelineError::Csv { path: path.display().to_string(), err }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|err| PipelineError::Json { path: path.display().to_string(), err })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let mut text = String::new();
    File::open(path).and_then(|mut f| f.read_to_string(&mut text)).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|err| PipelineError::Json { path: path.display().to_string(), err })
}

/// One scored sample. `date` is the day being predicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub substation_id: String,
    pub date: NaiveDate,
    pub split: String,
    pub label: bool,
    pub probability: f64,
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path).map_err(io_err(path))?));
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let headers = r.headers().map_err(csv_err(path))?.clone();
    for col in ["substation_id", "date", "split", "label", "probability"] {
        if !headers.iter().any(|h| h == col) {
            return Err(PipelineError::Data(format!("{}: missing column `{col}`", path.display())));
        }
    }
    r.deserialize().collect::<Result<Vec<PredictionRow>, _>>().map_err(csv_err(path))
}

/// Threshold chosen on validation, metrics on validation and test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub model: String,
    pub feature_set: String,
    pub threshold: f64,
    pub beta: f64,
    pub validation: MetricsReport,
    pub test: MetricsReport,
}

impl MetricsFile {
    pub fn rows(&self) -> Vec<MetricsRow> {
        let mut rows = self.validation.rows(&self.model, &self.feature_set, "validation");
        rows.extend(self.test.rows(&self.model, &self.feature_set, "test"));
        rows
    }
}

fn split_of<'a>(rows: &'a [PredictionRow], split: &str) -> (Vec<f64>, Vec<bool>) {
    rows.iter().filter(|r| r.split == split).map(|r| (r.probability, r.label)).unzip()
}

/// Picks the F-beta threshold on the `val` rows and scores `val` and `test`.
pub fn evaluate_predictions(
    rows: &[PredictionRow],
    model: &str,
    feature_set: &str,
    cfg: &EvalConfig,
) -> Result<MetricsFile, PipelineError> {
    let (vp, vy) = split_of(rows, "val");
    let (tp, ty) = split_of(rows, "test");
    if vp.is_empty() || tp.is_empty() {
        return Err(PipelineError::Data(format!("need val and test predictions, got {} and {}", vp.len(), tp.len())));
    }
    let threshold = select_threshold(&vp, &vy, cfg.beta);
    let validation = evaluate(&vp, &vy, &vec![Provenance::Original; vp.len()], threshold, cfg)?;
    let test = evaluate(&tp, &ty, &vec![Provenance::Original; tp.len()], threshold, cfg)?;
    Ok(MetricsFile { model: model.into(), feature_set: feature_set.into(), threshold, beta: cfg.beta, validation, test })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}
