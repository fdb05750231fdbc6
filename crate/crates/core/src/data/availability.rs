use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::record::HourlyDataset;
use crate::error::{Error, Result};

/// Last hour (inclusive) whose load is known when forecasting `day`:
/// 8AM on the previous day.
pub fn forecast_cutoff(day: NaiveDate) -> NaiveDateTime {
    (day - Duration::days(1)).and_hms_opt(8, 0, 0).unwrap()
}

/// Data visible when forecasting `forecast_day`.
///
/// Rows run up to the end of `forecast_day` so that its weather forecasts
/// stay visible. Every observed quantity after the cutoff is masked.
pub fn available_history(ds: &HourlyDataset, forecast_day: NaiveDate) -> Result<HourlyDataset> {
    let (first, last) = match (ds.start(), ds.end()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::DayOutOfRange(forecast_day)),
    };
    let cutoff = forecast_cutoff(forecast_day);
    let day_end = forecast_day.and_hms_opt(23, 0, 0).unwrap();
    // need one full day of history before the cutoff day and the whole target day
    if forecast_day < first.date() + Duration::days(2) || day_end > last {
        return Err(Error::DayOutOfRange(forecast_day));
    }
    let records = ds
        .records()
        .iter()
        .take_while(|r| r.timestamp <= day_end)
        .map(|r| {
            let mut r = r.clone();
            if r.timestamp > cutoff {
                r.mask_observations();
            }
            r
        })
        .collect();
    Ok(HourlyDataset::from_records_unchecked(records))
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl Window {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: NaiveDateTime) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Parses `start:end` with dates (`2021-01-18`) or timestamps.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("window `{s}` must look like start:end"));
        // timestamps contain ':' themselves, so split on the separator between two dates
        let candidates: Vec<usize> = s.match_indices(':').map(|(i, _)| i).collect();
        for i in candidates {
            let (a, b) = (&s[..i], &s[i + 1..]);
            if let (Ok(a), Ok(b)) = (parse_bound(a), parse_bound(b)) {
                if a < b {
                    return Ok(Window::new(a, b));
                }
            }
        }
        Err(bad())
    }
}

fn parse_bound(s: &str) -> Result<NaiveDateTime> {
    if let Ok(d) = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap());
    }
    super::ingest::parse_timestamp(s)
}

/// Time periods of a backtest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Offline models and weather corrections are fitted on data before this.
    pub train_end: NaiveDateTime,
    /// First forecast day of the daily loop.
    pub adaptation_start: NaiveDateTime,
    /// Aggregation weights start learning here.
    pub aggregation_start: NaiveDateTime,
    pub validation: Window,
    pub test: Window,
}

impl Segmentation {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("segmentation: {m}")));
        if self.train_end > self.aggregation_start {
            return err("train_end must not be after aggregation_start");
        }
        if self.adaptation_start > self.aggregation_start {
            return err("adaptation_start must not be after aggregation_start");
        }
        if self.aggregation_start > self.validation.start {
            return err("aggregation_start must not be after the validation window");
        }
        if self.validation.start > self.test.start {
            return err("validation must start before the test window");
        }
        if self.validation.start >= self.validation.end || self.test.start >= self.test.end {
            return err("windows must be non-empty");
        }
        if self.validation.overlaps(&self.test) {
            return err("validation and test windows overlap");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::HourlyRecord;

    fn ds(days: i64) -> HourlyDataset {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let recs = (0..days * 24)
            .map(|i| {
                let mut r = HourlyRecord::empty(start + Duration::hours(i));
                r.load = Some(1.0);
                r.temp_obs = Some(1.0);
                r
            })
            .collect();
        HourlyDataset::new(recs).unwrap()
    }

    #[test]
    fn last_observed_load_is_8am_previous_day() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 5).unwrap();
        let h = available_history(&ds(10), d).unwrap();
        let last = h.records().iter().rfind(|r| r.load.is_some()).unwrap();
        assert_eq!(
            last.timestamp,
            d.pred_opt().unwrap().and_hms_opt(8, 0, 0).unwrap()
        );
        assert_eq!(h.end().unwrap(), d.and_hms_opt(23, 0, 0).unwrap());
        // forecasts for day d remain visible, observations do not
        assert!(h.records().last().unwrap().temp_obs.is_none());
        assert_eq!(h.records().last().unwrap().temp_fc, 0.0);
    }

    #[test]
    fn second_day_has_no_history() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        assert!(matches!(
            available_history(&ds(10), d),
            Err(Error::DayOutOfRange(_))
        ));
        let late = NaiveDate::from_ymd_opt(2020, 1, 11).unwrap();
        assert!(available_history(&ds(10), late).is_err());
    }

    #[test]
    fn window_parsing() {
        let w = Window::parse("2021-01-18:2021-02-17").unwrap();
        assert_eq!(
            w.start.date(),
            NaiveDate::from_ymd_opt(2021, 1, 18).unwrap()
        );
        let w = Window::parse("2021-01-18T08:00:00:2021-01-19T00:00:00").unwrap();
        assert_eq!(w.start.format("%H").to_string(), "08");
        assert!(Window::parse("nonsense").is_err());
    }
}
