use serde::{Deserialize, Serialize};

use super::FeatureError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    /// `(x - median) / IQR`.
    Robust,
    /// `(x - mean) / std` with the population standard deviation.
    Standard,
}

/// Column-wise affine scaler. A zero spread falls back to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    center: Option<Vec<f64>>,
    scale: Option<Vec<f64>>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Scaler {
    pub fn new(kind: ScalerKind) -> Self {
        Self { kind, center: None, scale: None }
    }

    pub fn is_fitted(&self) -> bool {
        self.center.is_some()
    }

    pub fn center(&self) -> Option<&[f64]> {
        self.center.as_deref()
    }

    pub fn scale(&self) -> Option<&[f64]> {
        self.scale.as_deref()
    }

    pub fn fit(&mut self, rows: &[Vec<f64>]) -> Result<(), FeatureError> {
        if rows.len() < 2 {
            return Err(FeatureError::TooFewRows { needed: 2, got: rows.len() });
        }
        let width = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(FeatureError::Shape { expected: width, got: bad.len() });
        }
        let n = rows.len() as f64;
        let mut center = Vec::with_capacity(width);
        let mut scale = Vec::with_capacity(width);
        for c in 0..width {
            let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let (mid, spread) = match self.kind {
                ScalerKind::Robust => {
                    col.sort_by(f64::total_cmp);
                    (quantile(&col, 0.5), quantile(&col, 0.75) - quantile(&col, 0.25))
                }
                ScalerKind::Standard => {
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
            };
            center.push(mid);
            scale.push(if spread > 0.0 && spread.is_finite() { spread } else { 1.0 });
        }
        self.center = Some(center);
        self.scale = Some(scale);
        Ok(())
    }

    pub fn transform_row(&self, row: &mut [f64]) -> Result<(), FeatureError> {
        let (Some(center), Some(scale)) = (&self.center, &self.scale) else {
            return Err(FeatureError::NotFitted);
        };
        if row.len() != center.len() {
            return Err(FeatureError::Shape { expected: center.len(), got: row.len() });
        }
        for ((x, m), s) in row.iter_mut().zip(center).zip(scale) {
            *x = (*x - m) / s;
        }
        Ok(())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FeatureError> {
        rows.iter()
            .map(|r| {
                let mut out = r.clone();
                self.transform_row(&mut out)?;
                Ok(out)
            })
            .collect()
    }
}
