use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Days, NaiveDate};

use super::{column_index, EventRecord, IngestError};

/// Daily failure counts of one substation on a gap-free calendar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DailySeries {
    pub substation_id: String,
    pub start: NaiveDate,
    pub counts: Vec<u32>,
}

impl DailySeries {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.start + Days::new(i as u64)
    }

    /// Last covered day. Panics on an empty series.
    pub fn end(&self) -> NaiveDate {
        self.date(self.counts.len() - 1)
    }

    /// Position of `date` in the series, if covered.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.counts.len()).then_some(offset as usize)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Counts events per substation and calendar day (UTC).
///
/// With a `period`, every series covers exactly that inclusive date range and
/// events outside it are dropped. Without one, each series spans its own
/// first to last event day. Days without events are zero.
pub fn aggregate_daily(
    events: &[EventRecord],
    period: Option<(NaiveDate, NaiveDate)>,
) -> Result<Vec<DailySeries>, IngestError> {
    if let Some((start, end)) = period {
        if start > end {
            return Err(IngestError::Period(format!("{start} is after {end}")));
        }
    }
    let mut per_site: BTreeMap<&str, BTreeMap<NaiveDate, u32>> = BTreeMap::new();
    for e in events {
        let day = e.date();
        if let Some((start, end)) = period {
            if day < start || day > end {
                continue;
            }
        }
        *per_site.entry(e.substation_id.as_str()).or_default().entry(day).or_default() += 1;
    }
    Ok(per_site
        .into_iter()
        .map(|(id, days)| {
            let (start, end) = period.unwrap_or_else(|| {
                (*days.keys().next().expect("non-empty"), *days.keys().next_back().expect("non-empty"))
            });
            let len = (end - start).num_days() as usize + 1;
            let mut counts = vec![0u32; len];
            for (day, c) in days {
                counts[(day - start).num_days() as usize] = c;
            }
            DailySeries { substation_id: id.to_string(), start, counts }
        })
        .collect())
}

/// Minimum history a substation needs to be modelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterRule {
    pub min_days: usize,
    pub min_failures: u64,
}

impl Default for FilterRule {
    fn default() -> Self {
        Self { min_days: 180, min_failures: 100 }
    }
}

/// Keeps series with at least `min_days` observation days and at least
/// `min_failures` total failures.
pub fn filter_substations(series: Vec<DailySeries>, rule: &FilterRule) -> Vec<DailySeries> {
    series.into_iter().filter(|s| s.len() >= rule.min_days && s.total() >= rule.min_failures).collect()
}

/// One prediction instance: the `L` days ending at `day` and whether the
/// following day has at least one failure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub substation_id: String,
    /// Last day of the window.
    pub day: NaiveDate,
    /// Counts for `day - L + 1 ..= day`, oldest first.
    pub window: Vec<u32>,
    pub label: bool,
}

impl Sample {
    pub fn label_date(&self) -> NaiveDate {
        self.day + Days::new(1)
    }
}

/// Slides a window of `lookback` days over the series; the label is taken
/// from the day after the window. Short series yield no samples.
pub fn make_windows(series: &DailySeries, lookback: usize) -> Vec<Sample> {
    if lookback == 0 || series.len() < lookback + 1 {
        return Vec::new();
    }
    (lookback - 1..series.len() - 1)
        .map(|t| Sample {
            substation_id: series.substation_id.clone(),
            day: series.date(t),
            window: series.counts[t + 1 - lookback..=t].to_vec(),
            label: series.counts[t + 1] > 0,
        })
        .collect()
}

pub fn write_series_csv<W: Write>(series: &[DailySeries], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["substation_id", "date", "count"])?;
    for s in series {
        for (i, c) in s.counts.iter().enumerate() {
            w.write_record([s.substation_id.as_str(), &s.date(i).to_string(), &c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `substation_id,date,count`; days missing between a substation's
/// first and last row are zero-filled.
pub fn read_series_csv<R: Read>(input: R) -> Result<Vec<DailySeries>, IngestError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let id_col = column_index(&headers, "substation_id")?;
    let date_col = column_index(&headers, "date")?;
    let count_col = column_index(&headers, "count")?;
    let mut events: Vec<(String, NaiveDate, u32)> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let rec = row?;
        let line = i as u64 + 2;
        let bad = |reason: String| IngestError::BadRow { line, reason };
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        let date = NaiveDate::parse_from_str(rec.get(date_col).unwrap_or("").trim(), "%Y-%m-%d")
            .map_err(|e| bad(format!("date: {e}")))?;
        let count: u32 = rec.get(count_col).unwrap_or("").trim().parse().map_err(|e| bad(format!("count: {e}")))?;
        events.push((id, date, count));
    }
    let mut per_site: BTreeMap<String, BTreeMap<NaiveDate, u32>> = BTreeMap::new();
    for (id, date, count) in events {
        *per_site.entry(id).or_default().entry(date).or_default() += count;
    }
    Ok(per_site
        .into_iter()
        .map(|(id, days)| {
            let start = *days.keys().next().expect("non-empty");
            let end = *days.keys().next_back().expect("non-empty");
            let mut counts = vec![0u32; (end - start).num_days() as usize + 1];
            for (d, c) in days {
                counts[(d - start).num_days() as usize] = c;
            }
            DailySeries { substation_id: id, start, counts }
        })
        .collect())
}
