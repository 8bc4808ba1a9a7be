use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};

use super::{column_index, IngestError};

/// One logged failure, timestamp normalized to UTC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub substation_id: String,
    pub timestamp: DateTime<Utc>,
    pub cause: Option<String>,
    pub equipment: Option<String>,
}

impl EventRecord {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

/// Parsed event file: accepted records plus per-row rejections.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
    pub rejected: Vec<RejectedRow>,
}

/// Accepts RFC 3339 timestamps with an offset, naive date-times (taken as
/// UTC) and bare dates (midnight UTC).
fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
}

/// Reads `substation_id,timestamp[,cause,equipment]`. Malformed rows are
/// rejected individually; a missing required column fails the whole file.
pub fn read_events_csv<R: Read>(input: R) -> Result<EventLog, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let id_col = column_index(&headers, "substation_id")?;
    let ts_col = column_index(&headers, "timestamp")?;
    let cause_col = column_index(&headers, "cause").ok();
    let equipment_col = column_index(&headers, "equipment").ok();
    let optional = |rec: &csv::StringRecord, col: Option<usize>| {
        col.and_then(|c| rec.get(c)).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
    };

    let mut log = EventLog::default();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = match row {
            Ok(r) => r,
            Err(e) => {
                log.rejected.push(RejectedRow { line, reason: e.to_string() });
                continue;
            }
        };
        let id = rec.get(id_col).map(str::trim).unwrap_or("");
        if id.is_empty() {
            log.rejected.push(RejectedRow { line, reason: "empty substation_id".into() });
            continue;
        }
        let Some(timestamp) = rec.get(ts_col).and_then(parse_timestamp) else {
            log.rejected.push(RejectedRow { line, reason: "unparseable timestamp".into() });
            continue;
        };
        log.records.push(EventRecord {
            substation_id: id.to_string(),
            timestamp,
            cause: optional(&rec, cause_col),
            equipment: optional(&rec, equipment_col),
        });
    }
    if !log.rejected.is_empty() {
        log::warn!("rejected {} malformed event rows", log.rejected.len());
    }
    Ok(log)
}

pub fn write_events_csv<W: Write>(events: &[EventRecord], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["substation_id", "timestamp", "cause", "equipment"])?;
    for e in events {
        w.write_record([
            e.substation_id.as_str(),
            &e.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            e.cause.as_deref().unwrap_or(""),
            e.equipment.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}
