use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One hour of load and weather data. Observed values are optional until
/// they are revealed; forecasts are always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    pub load: Option<f64>,
    pub temp_fc: f64,
    pub temp_obs: Option<f64>,
    pub cloud_fc: f64,
    pub cloud_obs: Option<f64>,
    pub pressure_fc: f64,
    pub pressure_obs: Option<f64>,
    pub wind_speed_fc: f64,
    pub wind_speed_obs: Option<f64>,
    pub wind_dir_fc: f64,
    pub wind_dir_obs: Option<f64>,
    /// Set when the row was filled in by gap interpolation.
    #[serde(default)]
    pub interpolated: bool,
}

impl HourlyRecord {
    /// Record with all weather forecasts at zero and nothing observed.
    pub fn empty(timestamp: NaiveDateTime) -> Self {
        Self {
            timestamp,
            load: None,
            temp_fc: 0.0,
            temp_obs: None,
            cloud_fc: 0.0,
            cloud_obs: None,
            pressure_fc: 0.0,
            pressure_obs: None,
            wind_speed_fc: 0.0,
            wind_speed_obs: None,
            wind_dir_fc: 0.0,
            wind_dir_obs: None,
            interpolated: false,
        }
    }

    pub fn hour(&self) -> u32 {
        self.timestamp.hour()
    }

    /// Hides every observed quantity (load and weather realisations).
    pub fn mask_observations(&mut self) {
        self.load = None;
        self.temp_obs = None;
        self.cloud_obs = None;
        self.pressure_obs = None;
        self.wind_speed_obs = None;
        self.wind_dir_obs = None;
    }
}

/// Weather variables carried by each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherVar {
    Temperature,
    Cloud,
    Pressure,
    WindSpeed,
    WindDir,
}

impl WeatherVar {
    pub const ALL: [WeatherVar; 5] = [
        WeatherVar::Temperature,
        WeatherVar::Cloud,
        WeatherVar::Pressure,
        WeatherVar::WindSpeed,
        WeatherVar::WindDir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeatherVar::Temperature => "temperature",
            WeatherVar::Cloud => "cloud",
            WeatherVar::Pressure => "pressure",
            WeatherVar::WindSpeed => "wind_speed",
            WeatherVar::WindDir => "wind_dir",
        }
    }

    pub fn forecast(self, r: &HourlyRecord) -> f64 {
        match self {
            WeatherVar::Temperature => r.temp_fc,
            WeatherVar::Cloud => r.cloud_fc,
            WeatherVar::Pressure => r.pressure_fc,
            WeatherVar::WindSpeed => r.wind_speed_fc,
            WeatherVar::WindDir => r.wind_dir_fc,
        }
    }

    pub fn observed(self, r: &HourlyRecord) -> Option<f64> {
        match self {
            WeatherVar::Temperature => r.temp_obs,
            WeatherVar::Cloud => r.cloud_obs,
            WeatherVar::Pressure => r.pressure_obs,
            WeatherVar::WindSpeed => r.wind_speed_obs,
            WeatherVar::WindDir => r.wind_dir_obs,
        }
    }
}

impl std::str::FromStr for WeatherVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeatherVar::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown weather variable `{s}`")))
    }
}

/// Hourly records on a strict one-hour grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyDataset {
    records: Vec<HourlyRecord>,
}

impl HourlyDataset {
    /// Validates the one-hour cadence and value ranges.
    pub fn new(records: Vec<HourlyRecord>) -> Result<Self> {
        for pair in records.windows(2) {
            if pair[1].timestamp - pair[0].timestamp != Duration::hours(1) {
                return Err(Error::NonMonotonicTimestamp {
                    previous: pair[0].timestamp,
                    next: pair[1].timestamp,
                });
            }
        }
        for r in &records {
            if r.timestamp.minute() != 0 || r.timestamp.second() != 0 {
                return Err(Error::InvalidTimestamp(r.timestamp.to_string()));
            }
            let check = |name: &str, v: f64, lo: f64, hi: f64, hi_open: bool| -> Result<()> {
                let bad = !v.is_finite() || v < lo || if hi_open { v >= hi } else { v > hi };
                if bad {
                    return Err(Error::InvalidValue {
                        column: name.to_string(),
                        timestamp: r.timestamp,
                        value: v.to_string(),
                    });
                }
                Ok(())
            };
            check("cloud_fc", r.cloud_fc, 0.0, 100.0, false)?;
            check("wind_dir_fc", r.wind_dir_fc, 0.0, 360.0, true)?;
            if let Some(v) = r.cloud_obs {
                check("cloud_obs", v, 0.0, 100.0, false)?;
            }
            if let Some(v) = r.wind_dir_obs {
                check("wind_dir_obs", v, 0.0, 360.0, true)?;
            }
            for (name, v) in [
                ("temp_fc", r.temp_fc),
                ("pressure_fc", r.pressure_fc),
                ("wind_speed_fc", r.wind_speed_fc),
            ] {
                check(name, v, f64::NEG_INFINITY, f64::INFINITY, false)?;
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[HourlyRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<HourlyRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn start(&self) -> Option<NaiveDateTime> {
        self.records.first().map(|r| r.timestamp)
    }

    pub fn end(&self) -> Option<NaiveDateTime> {
        self.records.last().map(|r| r.timestamp)
    }

    pub fn get(&self, i: usize) -> Option<&HourlyRecord> {
        self.records.get(i)
    }

    /// Row index of `ts`, if it lies on the grid.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let start = self.start()?;
        let hours = (ts - start).num_hours();
        if hours < 0 || start + Duration::hours(hours) != ts {
            return None;
        }
        let i = hours as usize;
        (i < self.len()).then_some(i)
    }

    /// Index of the first row at or after `ts`, clamped to `len()`.
    pub fn index_at_or_after(&self, ts: NaiveDateTime) -> usize {
        match self.start() {
            None => 0,
            Some(start) => {
                let mins = (ts - start).num_minutes();
                if mins <= 0 {
                    0
                } else {
                    (((mins + 59) / 60) as usize).min(self.len())
                }
            }
        }
    }

    pub fn first_day(&self) -> Option<NaiveDate> {
        self.start().map(|t| t.date())
    }

    pub fn last_day(&self) -> Option<NaiveDate> {
        self.end().map(|t| t.date())
    }

    pub fn loads(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.load).collect()
    }

    /// Replaces the load of row `i`; used for mutation tests and what-if runs.
    pub fn set_load(&mut self, i: usize, load: Option<f64>) {
        self.records[i].load = load;
    }

    pub(crate) fn from_records_unchecked(records: Vec<HourlyRecord>) -> Self {
        Self { records }
    }
}
