use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::record::HourlyDataset;
use super::{load_d_lag, WEEK};
use crate::error::{Error, Result};

/// Minimum span for which weekly lags exist past the head.
const MIN_HOURS: usize = 8 * 24;

/// Weather covariates fed to the experts, one value per dataset row.
/// Usually the corrected forecasts; [`WeatherInputs::raw_forecasts`] takes
/// them straight from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherInputs {
    pub temp: Vec<f64>,
    pub cloud: Vec<f64>,
    pub pressure: Vec<f64>,
    pub wind_speed: Vec<f64>,
    pub wind_dir: Vec<f64>,
}

impl WeatherInputs {
    pub fn raw_forecasts(ds: &HourlyDataset) -> Self {
        let col = |f: fn(&super::HourlyRecord) -> f64| ds.records().iter().map(f).collect();
        Self {
            temp: col(|r| r.temp_fc),
            cloud: col(|r| r.cloud_fc),
            pressure: col(|r| r.pressure_fc),
            wind_speed: col(|r| r.wind_speed_fc),
            wind_dir: col(|r| r.wind_dir_fc),
        }
    }

    fn len(&self) -> usize {
        self.temp.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FeatureOptions {
    /// End of the training span; the trend reaches 1 there. Defaults to the last row.
    pub trend_end: Option<NaiveDateTime>,
    /// Weather covariates; defaults to the raw forecasts.
    pub weather: Option<WeatherInputs>,
}

/// Derived covariates for one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub timestamp: NaiveDateTime,
    pub hour: u32,
    /// 0 = Monday … 6 = Sunday.
    pub day_of_week: u32,
    pub toy: f64,
    pub trend: f64,
    pub temp: f64,
    pub temps95: f64,
    pub temps99: f64,
    pub cloud: f64,
    pub pressure: f64,
    pub wind_speed: f64,
    /// Degrees in [0, 360).
    pub wind_dir: f64,
    pub load: Option<f64>,
    pub load_d: Option<f64>,
    pub load_w: Option<f64>,
    pub interpolated: bool,
}

impl FeatureRow {
    pub fn forecastable(&self) -> bool {
        self.load_d.is_some() && self.load_w.is_some()
    }

    pub fn wind_dir_sin(&self) -> f64 {
        self.wind_dir.to_radians().sin()
    }

    pub fn wind_dir_cos(&self) -> f64 {
        self.wind_dir.to_radians().cos()
    }

    /// Usable as a training target: observed, not interpolated, lags present.
    pub fn trainable(&self) -> bool {
        self.load.is_some() && !self.interpolated && self.forecastable()
    }
}

/// Feature rows aligned one-to-one with the dataset rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    rows: Vec<FeatureRow>,
    trend_span_hours: f64,
}

impl FeatureFrame {
    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &FeatureRow {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn start(&self) -> NaiveDateTime {
        self.rows[0].timestamp
    }

    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let h = (ts - self.start()).num_hours();
        (h >= 0 && (h as usize) < self.len() && self.rows[h as usize].timestamp == ts)
            .then_some(h as usize)
    }

    /// Load observed `lag` hours before row `i`.
    pub fn lagged_load(&self, i: usize, lag: usize) -> Option<f64> {
        i.checked_sub(lag).and_then(|j| self.rows[j].load)
    }

    pub fn trend_span_hours(&self) -> f64 {
        self.trend_span_hours
    }

    /// Copy with the load of row `i` replaced and the dependent lags refreshed.
    pub fn with_load(&self, i: usize, load: Option<f64>) -> Self {
        let mut out = self.clone();
        out.rows[i].load = load;
        for j in [i + 24, i + 48, i + WEEK] {
            if j < out.len() {
                let h = out.rows[j].hour;
                out.rows[j].load_d = out.lagged_load(j, load_d_lag(h));
                out.rows[j].load_w = out.lagged_load(j, WEEK);
            }
        }
        out
    }
}

/// Position within the calendar year: 0 at Jan 1 00:00, 1 at Dec 31 23:00.
pub fn time_of_year(ts: NaiveDateTime) -> f64 {
    let year = ts.year();
    let start = NaiveDate::from_ymd_opt(year, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let next = NaiveDate::from_ymd_opt(year + 1, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let hours_in_year = (next - start).num_hours() as f64;
    let elapsed = (ts - start).num_minutes() as f64 / 60.0;
    elapsed / (hours_in_year - 1.0)
}

fn smooth(values: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = values.first().copied().unwrap_or(0.0);
    for &v in values {
        acc = factor * acc + (1.0 - factor) * v;
        out.push(acc);
    }
    out
}

/// Calendar, smoothed-temperature and load-lag features from raw forecasts.
pub fn build_features(ds: &HourlyDataset) -> Result<FeatureFrame> {
    build_features_with(ds, &FeatureOptions::default())
}

pub fn build_features_with(ds: &HourlyDataset, opts: &FeatureOptions) -> Result<FeatureFrame> {
    if ds.len() < MIN_HOURS {
        return Err(Error::DatasetTooShort {
            hours: ds.len(),
            required: MIN_HOURS,
        });
    }
    let raw;
    let weather = match &opts.weather {
        Some(w) => {
            if w.len() != ds.len() {
                return Err(Error::DimensionMismatch {
                    expected: ds.len(),
                    found: w.len(),
                });
            }
            w
        }
        None => {
            raw = WeatherInputs::raw_forecasts(ds);
            &raw
        }
    };
    let start = ds.start().expect("non-empty dataset");
    let trend_span_hours = match opts.trend_end {
        Some(end) => (end - start).num_hours().max(1) as f64,
        None => (ds.len() - 1) as f64,
    };
    let temps95 = smooth(&weather.temp, 0.95);
    let temps99 = smooth(&weather.temp, 0.99);
    let loads = ds.loads();
    let lag = |i: usize, l: usize| i.checked_sub(l).and_then(|j| loads[j]);

    let rows = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let hour = r.timestamp.hour();
            FeatureRow {
                timestamp: r.timestamp,
                hour,
                day_of_week: r.timestamp.weekday().num_days_from_monday(),
                toy: time_of_year(r.timestamp),
                trend: i as f64 / trend_span_hours,
                temp: weather.temp[i],
                temps95: temps95[i],
                temps99: temps99[i],
                cloud: weather.cloud[i],
                pressure: weather.pressure[i],
                wind_speed: weather.wind_speed[i],
                wind_dir: weather.wind_dir[i].rem_euclid(360.0),
                load: r.load,
                load_d: lag(i, load_d_lag(hour)),
                load_w: lag(i, WEEK),
                interpolated: r.interpolated,
            }
        })
        .collect();
    Ok(FeatureFrame {
        rows,
        trend_span_hours,
    })
}
