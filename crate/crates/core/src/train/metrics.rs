use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::augment::Provenance;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

/// Weighted harmonic mean of precision and recall; 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 { 0.0 } else { (1.0 + b2) * precision * recall / denom }
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Zero when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f_beta(self.precision(), self.recall(), 1.0)
    }

    pub fn f_beta(&self, beta: f64) -> f64 {
        f_beta(self.precision(), self.recall(), beta)
    }
}

/// Hard predictions are `p >= threshold`.
pub fn confusion(probs: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Sweeps 0.01, 0.02, ..., 0.99 and returns the threshold maximizing
/// F-beta, the lowest one on ties. Single-class labels give 0.5.
pub fn select_threshold(probs: &[f64], labels: &[bool], beta: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        log::warn!("validation labels are single-class; using threshold 0.5");
        return 0.5;
    }
    let mut best = (f64::NEG_INFINITY, 0.5);
    for i in 1..=99 {
        let t = f64::from(i) / 100.0;
        let score = confusion(probs, labels, t).f_beta(beta);
        if score > best.0 {
            best = (score, t);
        }
    }
    best.1
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub boot_iters: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { boot_iters: 1000, beta: 2.0, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub n: usize,
    pub positives: usize,
    pub accuracy: MetricCi,
    pub precision: MetricCi,
    pub recall: MetricCi,
    pub f1: MetricCi,
    pub mae: MetricCi,
    pub confusion: Confusion,
}

/// Accuracy, precision, recall, F1 and MAE over `idx`. The three
/// positive-class metrics are `None` when `idx` has no positive label.
fn point(probs: &[f64], labels: &[bool], threshold: f64, idx: impl Iterator<Item = usize>) -> [Option<f64>; 5] {
    let mut c = Confusion::default();
    let mut abs = 0.0;
    let mut n = 0;
    for i in idx {
        let (p, y) = (probs[i], labels[i]);
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
        abs += (p - f64::from(u8::from(y))).abs();
        n += 1;
    }
    let has_pos = c.tp + c.fn_ > 0;
    let pos = |v: f64| has_pos.then_some(v);
    [Some(c.accuracy()), pos(c.precision()), pos(c.recall()), pos(c.f1()), Some(abs / n as f64)]
}

/// Metrics at `threshold` with 95% percentile-bootstrap intervals. Rows
/// flagged as synthetic are refused. Resamples without a positive label are
/// skipped for precision, recall and F1. Intervals are widened to include
/// the point estimate when resampling puts it outside.
pub fn evaluate(
    probs: &[f64],
    labels: &[bool],
    provenance: &[Provenance],
    threshold: f64,
    cfg: &EvalConfig,
) -> Result<MetricsReport, TrainError> {
    if probs.is_empty() || probs.len() != labels.len() || provenance.len() != labels.len() {
        return Err(TrainError::Invalid(format!(
            "{} probabilities, {} labels, {} provenance flags",
            probs.len(),
            labels.len(),
            provenance.len()
        )));
    }
    let synthetic = provenance.iter().filter(|p| p.is_synthetic()).count();
    if synthetic > 0 {
        return Err(TrainError::SyntheticRows(synthetic));
    }
    let n = probs.len();
    let c = confusion(probs, labels, threshold);
    let mae = probs.iter().zip(labels).map(|(p, &y)| (p - f64::from(u8::from(y))).abs()).sum::<f64>() / n as f64;
    let base = [c.accuracy(), c.precision(), c.recall(), c.f1(), mae];
    let mut samples: [Vec<f64>; 5] = Default::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = vec![0usize; n];
    for _ in 0..cfg.boot_iters {
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..n));
        let m = point(probs, labels, threshold, idx.iter().copied());
        for (s, v) in samples.iter_mut().zip(m) {
            s.extend(v);
        }
    }
    let ci = |k: usize| {
        let value = base[k];
        if samples[k].is_empty() {
            return MetricCi { value, ci_lo: value, ci_hi: value };
        }
        let mut s = samples[k].clone();
        s.sort_by(f64::total_cmp);
        MetricCi { value, ci_lo: percentile(&s, 0.025).min(value), ci_hi: percentile(&s, 0.975).max(value) }
    };
    Ok(MetricsReport {
        threshold,
        n,
        positives: labels.iter().filter(|&&l| l).count(),
        accuracy: ci(0),
        precision: ci(1),
        recall: ci(2),
        f1: ci(3),
        mae: ci(4),
        confusion: c,
    })
}

/// One line of the long-format metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub feature_set: String,
    pub fold: String,
    pub metric: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl MetricsReport {
    pub fn rows(&self, model: &str, feature_set: &str, fold: &str) -> Vec<MetricsRow> {
        [("accuracy", self.accuracy), ("precision", self.precision), ("recall", self.recall), ("f1", self.f1), ("mae", self.mae)]
            .into_iter()
            .map(|(metric, m)| MetricsRow {
                model: model.into(),
                feature_set: feature_set.into(),
                fold: fold.into(),
                metric: metric.into(),
                value: m.value,
                ci_lo: m.ci_lo,
                ci_hi: m.ci_hi,
            })
            .collect()
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn originals(n: usize) -> Vec<Provenance> {
        vec![Provenance::Original; n]
    }

    /// Independent sweep: every candidate scored, first maximum kept.
    fn oracle_threshold(probs: &[f64], labels: &[bool]) -> f64 {
        let scores: Vec<(f64, f64)> = (1..=99)
            .map(|i| {
                let t = i as f64 / 100.0;
                let tp = probs.iter().zip(labels).filter(|(p, y)| **p >= t && **y).count() as f64;
                let fp = probs.iter().zip(labels).filter(|(p, y)| **p >= t && !**y).count() as f64;
                let fneg = probs.iter().zip(labels).filter(|(p, y)| **p < t && **y).count() as f64;
                let f2 = if tp == 0.0 { 0.0 } else { 5.0 * tp / (5.0 * tp + 4.0 * fneg + fp) };
                (t, f2)
            })
            .collect();
        let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        scores.iter().find(|s| s.1 == best).unwrap().0
    }

    #[test]
    fn threshold_examples() {
        let labels = [true, false, true, false];
        assert_eq!(select_threshold(&[1.0, 0.0, 1.0, 0.0], &labels, 2.0), 0.01);
        assert_eq!(select_threshold(&[0.3, 0.2], &[true, true], 2.0), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let labels: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.1)).collect();
            let probs: Vec<f64> = labels.iter().map(|&l| (rng.gen::<f64>() * 0.7 + if l { 0.3 } else { 0.0 }).min(1.0)).collect();
            if labels.iter().any(|&l| l) {
                assert_eq!(select_threshold(&probs, &labels, 2.0), oracle_threshold(&probs, &labels));
            }
        }
    }

    #[test]
    fn all_positive_predictor_has_full_recall() {
        let labels = [true, false, false, true, false];
        let probs = [0.995, 0.999, 1.0, 0.99, 0.996];
        for i in 1..=99 {
            assert_eq!(confusion(&probs, &labels, i as f64 / 100.0).recall(), 1.0);
        }
        assert_eq!(select_threshold(&probs, &labels, 2.0), 0.01);
        assert_eq!(confusion(&probs, &labels, 0.5).precision(), 0.4);
    }

    #[test]
    fn perfect_and_flipped_predictors() {
        let labels = [true, false, false, true, false, false];
        let probs: Vec<f64> = labels.iter().map(|&l| if l { 0.9 } else { 0.1 }).collect();
        let r = evaluate(&probs, &labels, &originals(6), 0.5, &EvalConfig::default()).unwrap();
        for m in [r.accuracy, r.precision, r.recall, r.f1] {
            assert_eq!((m.value, m.ci_lo, m.ci_hi), (1.0, 1.0, 1.0));
        }
        let flipped: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let r = evaluate(&flipped, &labels, &originals(6), 0.5, &EvalConfig::default()).unwrap();
        assert_eq!(r.recall.value, 0.0);
        assert!((r.mae.value - 0.9).abs() < 1e-12);
    }

    #[test]
    fn always_negative_on_rare_positives() {
        let n = 10_000;
        let labels: Vec<bool> = (0..n).map(|i| i < 497).collect();
        let r = evaluate(&vec![0.0; n], &labels, &originals(n), 0.5, &EvalConfig { boot_iters: 50, ..EvalConfig::default() }).unwrap();
        assert!((r.accuracy.value - 0.9503).abs() < 1e-12);
        assert_eq!((r.recall.value, r.f1.value, r.precision.value), (0.0, 0.0, 0.0));
    }

    #[test]
    fn synthetic_rows_are_refused() {
        let mut prov = originals(3);
        prov[1] = Provenance::Smote;
        assert_eq!(evaluate(&[0.1, 0.2, 0.3], &[true, false, true], &prov, 0.5, &EvalConfig::default()).unwrap_err(), TrainError::SyntheticRows(1));
    }

    #[test]
    fn report_is_reproducible_and_contains_point_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels: Vec<bool> = (0..300).map(|_| rng.gen_bool(0.2)).collect();
        let probs: Vec<f64> = labels.iter().map(|&l| if l { rng.gen_range(0.3..1.0) } else { rng.gen_range(0.0..0.7) }).collect();
        let cfg = EvalConfig { seed: 4, ..EvalConfig::default() };
        let a = evaluate(&probs, &labels, &originals(300), 0.5, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&evaluate(&probs, &labels, &originals(300), 0.5, &cfg).unwrap()).unwrap());
        for m in [a.accuracy, a.precision, a.recall, a.f1, a.mae] {
            assert!(m.ci_lo <= m.value && m.value <= m.ci_hi);
        }
        let rows = a.rows("stgt", "all", "test");
        assert_eq!(rows.len(), 5);
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("model,feature_set,fold,metric,value,ci_lo,ci_hi\nstgt,all,test,accuracy,"));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&s, 1.0), 4.0);
        assert_eq!(percentile(&s, 0.5), 2.5);
    }
}
