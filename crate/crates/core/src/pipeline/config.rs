use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::augment::AugmentConfig;
use crate::features::{FeatureGroups, SelectConfig};
use crate::ingest::{FilterRule, SynthConfig};
use crate::stgt::ModelConfig;
use crate::train::{EvalConfig, SplitSpec, TrainConfig};
use crate::trees::GbtConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSettings {
    pub min_days: usize,
    pub min_failures: u64,
    /// Inclusive study period; without it the span of the event log.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl Default for IngestSettings {
    fn default() -> Self {
        let rule = FilterRule::default();
        Self { min_days: rule.min_days, min_failures: rule.min_failures, start: None, end: None }
    }
}

impl IngestSettings {
    pub fn rule(&self) -> FilterRule {
        FilterRule { min_days: self.min_days, min_failures: self.min_failures }
    }

    pub fn period(&self) -> Result<Option<(NaiveDate, NaiveDate)>, PipelineError> {
        match (self.start, self.end) {
            (Some(a), Some(b)) => Ok(Some((a, b))),
            (None, None) => Ok(None),
            _ => Err(PipelineError::Config("ingest.start and ingest.end must be given together".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSettings {
    pub tau_km: f64,
}

impl Default for GraphSettings {
    fn default() -> Self {
        Self { tau_km: 50.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSettings {
    pub lookback: usize,
    pub groups: FeatureGroups,
    /// Run bootstrap selection on the static pool before training.
    pub select: bool,
    /// Include the days-since-series-start column in the window encoding.
    pub time_counter: bool,
    /// Include the calendar columns (day-of-year sinusoids, weekday, month,
    /// weekend) in the window encoding.
    pub calendar: bool,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self { lookback: 14, groups: FeatureGroups::default(), select: true, time_counter: true, calendar: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSettings {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { alpha: 0.3, gamma: 2.0 }
    }
}

/// Every tunable of the pipeline. Stage seeds are derived from `seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub ingest: IngestSettings,
    pub graph: GraphSettings,
    pub features: FeatureSettings,
    pub select: SelectConfig,
    pub augment: AugmentConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub loss: LossSettings,
    pub train: TrainConfig,
    pub gbt: GbtConfig,
    pub eval: EvalConfig,
}

/// Deterministic per-stage seed: SplitMix64 over the root seed mixed with
/// an FNV-1a hash of the stage name, kept below 2^63 so it fits a TOML
/// integer.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 1
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Config(format!("cannot write config as TOML: {e}")))
    }

    /// Copy with every stage seed derived from the root seed and the graph
    /// threshold shared between generator and graph stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = stage_seed(c.seed, "synth");
        c.augment.seed = stage_seed(c.seed, "augment");
        c.train.seed = stage_seed(c.seed, "train");
        c.eval.seed = stage_seed(c.seed, "eval");
        c.synth.tau_km = c.graph.tau_km;
        c.model.lookback = c.features.lookback;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }.resolved()
    }

    pub fn seed_for(&self, stage: &str) -> u64 {
        stage_seed(self.seed, stage)
    }
}
