use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Calendar years (inclusive ranges) of each partition plus substations
/// kept out of training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_years: (i32, i32),
    pub val_years: (i32, i32),
    pub test_years: (i32, i32),
    pub holdout: Vec<String>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_years: (2020, 2020), val_years: (2021, 2021), test_years: (2022, 2022), holdout: Vec::new() }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ranges = [self.train_years, self.val_years, self.test_years];
        if ranges.iter().any(|(a, b)| a > b) || self.train_years.1 >= self.val_years.0 || self.val_years.1 >= self.test_years.0 {
            return Err(TrainError::Config(format!("split years must be ordered and disjoint: {ranges:?}")));
        }
        Ok(())
    }

    /// Last day of the training years.
    pub fn train_end(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.train_years.1, 12, 31).expect("valid year")
    }
}

/// Indices into the sample list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partitions {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns samples by the year of their label day. Samples of held-out
/// substations are dropped from training but kept in validation and test;
/// label days outside every range are ignored.
pub fn temporal_split(label_dates: &[NaiveDate], substations: &[&str], spec: &SplitSpec) -> Result<Partitions, TrainError> {
    spec.validate()?;
    if label_dates.len() != substations.len() {
        return Err(TrainError::Invalid("one substation per sample is required".into()));
    }
    let within = |y: i32, (a, b): (i32, i32)| a <= y && y <= b;
    let mut p = Partitions::default();
    for (i, (d, s)) in label_dates.iter().zip(substations).enumerate() {
        let y = d.year();
        if within(y, spec.train_years) {
            if !spec.holdout.iter().any(|h| h == s) {
                p.train.push(i);
            }
        } else if within(y, spec.val_years) {
            p.val.push(i);
        } else if within(y, spec.test_years) {
            p.test.push(i);
        }
    }
    for (name, part) in [("train", &p.train), ("validation", &p.val), ("test", &p.test)] {
        if part.is_empty() {
            return Err(TrainError::Config(format!("{name} partition is empty")));
        }
    }
    check_partition_order(label_dates, &p)?;
    Ok(p)
}

fn span(dates: &[NaiveDate], idx: &[usize]) -> Option<(NaiveDate, NaiveDate)> {
    let min = idx.iter().map(|&i| dates[i]).min()?;
    let max = idx.iter().map(|&i| dates[i]).max()?;
    Some((min, max))
}

/// Fails unless max(train) < min(val) <= max(val) < min(test) by label date.
pub fn check_partition_order(label_dates: &[NaiveDate], p: &Partitions) -> Result<(), TrainError> {
    let (Some(tr), Some(va), Some(te)) = (span(label_dates, &p.train), span(label_dates, &p.val), span(label_dates, &p.test)) else {
        return Err(TrainError::Leakage("a partition is empty".into()));
    };
    if tr.1 >= va.0 {
        return Err(TrainError::Leakage(format!("train ends {} but validation starts {}", tr.1, va.0)));
    }
    if va.1 >= te.0 {
        return Err(TrainError::Leakage(format!("validation ends {} but test starts {}", va.1, te.0)));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fit: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Forward-chaining folds over `k + 1` contiguous blocks of distinct label
/// days: fold `i` fits on blocks `0..=i` and holds out block `i + 1`.
/// `idx` selects the samples to fold.
pub fn cv_folds(label_dates: &[NaiveDate], idx: &[usize], k: usize) -> Result<Vec<Fold>, TrainError> {
    if k == 0 {
        return Err(TrainError::Config("k must be at least 1".into()));
    }
    let days: Vec<NaiveDate> = idx.iter().map(|&i| label_dates[i]).collect::<BTreeSet<_>>().into_iter().collect();
    let months: BTreeSet<(i32, u32)> = days.iter().map(|d| (d.year(), d.month())).collect();
    if months.len() < k + 1 {
        return Err(TrainError::Config(format!("{k} folds need at least {} distinct months, found {}", k + 1, months.len())));
    }
    let blocks = k + 1;
    let block_of_day = |pos: usize| pos * blocks / days.len();
    let mut by_block: Vec<Vec<usize>> = vec![Vec::new(); blocks];
    for &i in idx {
        let pos = days.binary_search(&label_dates[i]).expect("day present");
        by_block[block_of_day(pos)].push(i);
    }
    let folds: Vec<Fold> = (0..k)
        .map(|f| Fold { fit: by_block[..=f].concat(), holdout: by_block[f + 1].clone() })
        .collect();
    check_forward_chaining(label_dates, &folds)?;
    Ok(folds)
}

/// Fails unless every fold's fit days precede its holdout days and holdouts
/// are pairwise disjoint.
pub fn check_forward_chaining(label_dates: &[NaiveDate], folds: &[Fold]) -> Result<(), TrainError> {
    let mut seen = BTreeSet::new();
    for (i, f) in folds.iter().enumerate() {
        let (Some(fit), Some(hold)) = (span(label_dates, &f.fit), span(label_dates, &f.holdout)) else {
            return Err(TrainError::Leakage(format!("fold {i} has an empty side")));
        };
        if fit.1 >= hold.0 {
            return Err(TrainError::Leakage(format!("fold {i}: fit ends {} but holdout starts {}", fit.1, hold.0)));
        }
        for &s in &f.holdout {
            if !seen.insert(s) {
                return Err(TrainError::Leakage(format!("sample {s} is held out twice")));
            }
        }
    }
    Ok(())
}
