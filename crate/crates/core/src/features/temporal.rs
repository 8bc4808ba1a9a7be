use chrono::{Datelike, Days, NaiveDate, Weekday};

use super::FeatureError;
use crate::ingest::Sample;

/// Width of one encoded day.
pub const F_X: usize = 24;

pub const TEMPORAL_NAMES: [&str; F_X] = [
    "log_count", "sin_doy", "cos_doy",
    "mon", "tue", "wed", "thu", "fri", "sat", "sun",
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    "time_counter", "weekend",
];

const WEEKDAY_OFFSET: usize = 3;
const MONTH_OFFSET: usize = 10;
const TIME_COUNTER: usize = 22;
const WEEKEND: usize = 23;

/// `ln(1 + d)`.
pub fn log_transform(count: f64) -> Result<f64, FeatureError> {
    if count < 0.0 || count.is_nan() {
        return Err(FeatureError::NegativeCount(count));
    }
    Ok(count.ln_1p())
}

/// One-hot and flag columns, which augmentation copies instead of perturbing.
pub fn is_discrete_temporal(col: usize) -> bool {
    (WEEKDAY_OFFSET..TIME_COUNTER).contains(&col) || col == WEEKEND
}

/// Encodes one day: log count, day-of-year sinusoids, weekday and month
/// one-hots, days since the series start, weekend flag.
pub fn encode_temporal(count: u32, date: NaiveDate, time_counter: f64) -> [f64; F_X] {
    let mut row = [0.0; F_X];
    row[0] = f64::from(count).ln_1p();
    let angle = std::f64::consts::TAU * f64::from(date.ordinal()) / 365.25;
    row[1] = angle.sin();
    row[2] = angle.cos();
    row[WEEKDAY_OFFSET + date.weekday().num_days_from_monday() as usize] = 1.0;
    row[MONTH_OFFSET + date.month0() as usize] = 1.0;
    row[TIME_COUNTER] = time_counter;
    row[WEEKEND] = f64::from(u8::from(matches!(date.weekday(), Weekday::Sat | Weekday::Sun)));
    row
}

/// Encodes every day of a sample's window, oldest first. The time counter
/// counts days since `series_start`.
pub fn encode_window(sample: &Sample, series_start: NaiveDate) -> Vec<[f64; F_X]> {
    let first = sample.day - Days::new(sample.window.len() as u64 - 1);
    sample
        .window
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let date = first + Days::new(k as u64);
            encode_temporal(c, date, (date - series_start).num_days() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn log_transform_values_and_errors() {
        assert_eq!(log_transform(0.0).unwrap(), 0.0);
        assert!((log_transform(1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((log_transform(std::f64::consts::E - 1.0).unwrap() - 1.0).abs() < 1e-15);
        let v: Vec<f64> = (0..=100).map(|d| log_transform(d as f64).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(log_transform(-1.0).unwrap_err(), FeatureError::NegativeCount(-1.0));
    }

    #[test]
    fn calendar_flags() {
        let sat = encode_temporal(0, d(2022, 1, 1), 0.0);
        assert_eq!(sat[WEEKEND], 1.0);
        assert_eq!(sat[WEEKDAY_OFFSET + 5], 1.0);
        assert_eq!(sat[MONTH_OFFSET], 1.0);
        let wed = encode_temporal(3, d(2022, 6, 15), 5.0);
        assert_eq!(wed[WEEKEND], 0.0);
        assert_eq!(wed[MONTH_OFFSET + 5], 1.0);
        assert_eq!(wed[TIME_COUNTER], 5.0);
        assert!((wed[0] - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_hots_and_unit_circle_hold_every_day() {
        let mut day = d(2019, 1, 1);
        while day <= d(2021, 12, 31) {
            let r = encode_temporal(1, day, 0.0);
            assert_eq!(r[WEEKDAY_OFFSET..MONTH_OFFSET].iter().sum::<f64>(), 1.0);
            assert_eq!(r[MONTH_OFFSET..TIME_COUNTER].iter().sum::<f64>(), 1.0);
            assert!((r[1] * r[1] + r[2] * r[2] - 1.0).abs() < 1e-12);
            day = day.succ_opt().unwrap();
        }
    }

    #[test]
    fn day_of_year_encoding_has_a_yearly_period() {
        for start in [d(2020, 3, 1), d(2021, 7, 19), d(2022, 11, 30)] {
            let a = encode_temporal(0, start, 0.0);
            let b = encode_temporal(0, start + Days::new(365), 0.0);
            let angle = std::f64::consts::TAU * f64::from(start.ordinal()) / 365.25;
            assert!((a[1] - angle.sin()).abs() < 1e-15);
            assert!((a[1] - b[1]).abs() < 0.02 && (a[2] - b[2]).abs() < 0.02);
        }
    }

    #[test]
    fn window_rows_follow_the_calendar() {
        let s = Sample { substation_id: "a".into(), day: d(2020, 1, 14), window: (0..14).collect(), label: true };
        let rows = encode_window(&s, d(2020, 1, 1));
        assert_eq!(rows.len(), 14);
        assert_eq!(rows[0], encode_temporal(0, d(2020, 1, 1), 0.0));
        assert_eq!(rows[13], encode_temporal(13, d(2020, 1, 14), 13.0));
    }

    #[test]
    fn discrete_columns() {
        let discrete: Vec<usize> = (0..F_X).filter(|&c| is_discrete_temporal(c)).collect();
        assert_eq!(discrete, (3..22).chain([23]).collect::<Vec<_>>());
    }
}
