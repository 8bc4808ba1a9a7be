use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::Matrix;
use crate::stgt::{Batch, DayGroup};

/// An augmented sequence attached to a day: it replaces the real member at
/// `slot` while the other substations of that day stay as context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMember {
    pub seq: usize,
    pub slot: usize,
    pub label: bool,
}

/// All substations of one label day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    /// Last day of the input windows.
    pub day: NaiveDate,
    /// Real sequences, one per substation present that day.
    pub real: Vec<usize>,
    pub labels: Vec<bool>,
    /// Row-major adjacency among `real`, unit diagonal.
    pub mask: Vec<f64>,
    pub synthetic: Vec<SyntheticMember>,
}

impl Bundle {
    pub fn targets(&self) -> usize {
        self.real.len() + self.synthetic.len()
    }

    pub fn target_labels(&self) -> impl Iterator<Item = bool> + '_ {
        self.labels.iter().copied().chain(self.synthetic.iter().map(|s| s.label))
    }
}

/// Scaled input windows and their day bundles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqDataset {
    pub lookback: usize,
    pub f_x: usize,
    /// `L·F_x` values per sequence.
    pub windows: Vec<f64>,
    pub nodes: Vec<usize>,
    pub bundles: Vec<Bundle>,
}

impl SeqDataset {
    pub fn new(lookback: usize, f_x: usize) -> Self {
        Self { lookback, f_x, windows: Vec::new(), nodes: Vec::new(), bundles: Vec::new() }
    }

    pub fn sequences(&self) -> usize {
        self.nodes.len()
    }

    /// Appends a sequence and returns its index.
    pub fn push_sequence(&mut self, window: &[f64], node: usize) -> Result<usize, TrainError> {
        if window.len() != self.lookback * self.f_x {
            return Err(TrainError::Invalid(format!("window has {} values, expected {}", window.len(), self.lookback * self.f_x)));
        }
        self.windows.extend_from_slice(window);
        self.nodes.push(node);
        Ok(self.nodes.len() - 1)
    }

    pub fn window(&self, seq: usize) -> &[f64] {
        let w = self.lookback * self.f_x;
        &self.windows[seq * w..(seq + 1) * w]
    }

    pub fn targets(&self) -> usize {
        self.bundles.iter().map(Bundle::targets).sum()
    }

    pub fn real_targets(&self) -> usize {
        self.bundles.iter().map(|b| b.real.len()).sum()
    }

    /// Labels of the real members, bundle by bundle.
    pub fn real_labels(&self) -> Vec<bool> {
        self.bundles.iter().flat_map(|b| b.labels.iter().copied()).collect()
    }

    pub fn positive_share(&self) -> f64 {
        let n = self.targets();
        let pos: usize = self.bundles.iter().map(|b| b.target_labels().filter(|&l| l).count()).sum();
        if n == 0 { 0.0 } else { pos as f64 / n as f64 }
    }

    /// Builds a batch from the given bundles. With `with_synthetic`, every
    /// synthetic member gets its own group that reuses the day's real
    /// sequences as context. Returns the batch and its target labels.
    pub fn batch(&self, bundle_ids: &[usize], with_synthetic: bool) -> (Batch, Vec<bool>) {
        let mut seq_ids = Vec::new();
        let mut groups = Vec::new();
        let mut labels = Vec::new();
        for &b in bundle_ids {
            let bundle = &self.bundles[b];
            let base = seq_ids.len();
            seq_ids.extend_from_slice(&bundle.real);
            let members: Vec<usize> = (base..base + bundle.real.len()).collect();
            groups.push(DayGroup { members: members.clone(), mask: bundle.mask.clone(), targets: (0..members.len()).collect() });
            labels.extend_from_slice(&bundle.labels);
            if with_synthetic {
                for s in &bundle.synthetic {
                    let mut m = members.clone();
                    m[s.slot] = seq_ids.len();
                    seq_ids.push(s.seq);
                    groups.push(DayGroup { members: m, mask: bundle.mask.clone(), targets: vec![s.slot] });
                    labels.push(s.label);
                }
            }
        }
        let w = self.lookback * self.f_x;
        let mut data = Vec::with_capacity(seq_ids.len() * w);
        for &s in &seq_ids {
            data.extend_from_slice(self.window(s));
        }
        let windows = Matrix::from_vec(seq_ids.len() * self.lookback, self.f_x, data).expect("window size");
        let nodes = seq_ids.iter().map(|&s| self.nodes[s]).collect();
        (Batch { windows, nodes, groups }, labels)
    }
}
