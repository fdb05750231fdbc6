//! Intraday residual correction.
//!
//! A forecast for hour `h` of day `d` is issued at 8AM on day `d−1`, when the
//! freshest residual is `h+16` hours old. Each hour gets its own
//! autoregression on the 24 residuals at lags `h+16, …, h+39`.

use std::ops::Range;

use chrono::{Duration, NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, NormalEquations};

/// Age of the freshest residual relative to the target hour.
pub const LAG_OFFSET: usize = 16;
pub const NUM_LAGS: usize = 24;

/// Lags `h+16, …, h+39` used for hour `hour`.
pub fn intraday_lags(hour: u32) -> Range<usize> {
    let first = hour as usize + LAG_OFFSET;
    first..first + NUM_LAGS
}

/// Hourly residuals on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub start: NaiveDateTime,
    pub values: Vec<Option<f64>>,
}

impl ResidualSeries {
    pub fn new(start: NaiveDateTime, values: Vec<Option<f64>>) -> Self {
        Self { start, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hour(&self, t: usize) -> u32 {
        (self.start + Duration::hours(t as i64)).hour()
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::hours(t as i64)
    }

    /// The 24 lagged residuals for target index `t`, freshest first.
    pub fn lags(&self, t: usize) -> Result<Vec<f64>> {
        intraday_lags(self.hour(t))
            .map(|lag| {
                t.checked_sub(lag)
                    .and_then(|j| self.values[j])
                    .ok_or(Error::MissingResidual {
                        timestamp: self.timestamp(t),
                        lag,
                    })
            })
            .collect()
    }

    fn design_row(&self, t: usize) -> Option<(Vec<f64>, f64)> {
        let y = self.values.get(t).copied().flatten()?;
        let mut x = self.lags(t).ok()?;
        x.push(1.0);
        Some((x, y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntradayHour {
    /// Coefficients of lags `h+16, …, h+39`, in that order.
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl IntradayHour {
    pub fn zero() -> Self {
        Self {
            coef: vec![0.0; NUM_LAGS],
            intercept: 0.0,
        }
    }

    fn from_beta(beta: &DVector<f64>) -> Self {
        Self {
            coef: beta.as_slice()[..NUM_LAGS].to_vec(),
            intercept: beta[NUM_LAGS],
        }
    }

    fn correction(&self, lags: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(lags).map(|(c, r)| c * r).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntradayModel {
    pub hours: Vec<IntradayHour>,
}

impl IntradayModel {
    pub fn zero() -> Self {
        Self {
            hours: (0..24).map(|_| IntradayHour::zero()).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-hour OLS of `r_t` on its lags and an intercept, over targets in `window`.
pub fn fit_intraday(series: &ResidualSeries, window: Range<usize>) -> Result<IntradayModel> {
    let mut rows: Vec<Vec<(Vec<f64>, f64)>> = vec![Vec::new(); 24];
    for t in window.start..window.end.min(series.len()) {
        if let Some(row) = series.design_row(t) {
            rows[series.hour(t) as usize].push(row);
        }
    }
    let hours = rows
        .into_iter()
        .enumerate()
        .map(|(h, rows)| {
            if rows.len() < 2 * (NUM_LAGS + 1) {
                return Err(Error::InsufficientHistory(format!(
                    "{} residual rows for hour {h}",
                    rows.len()
                )));
            }
            let x = DMatrix::from_fn(rows.len(), NUM_LAGS + 1, |i, j| rows[i].0[j]);
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            let beta = lstsq(&x, &y).map_err(|e| e.context(format!("intraday hour {h}")))?;
            Ok(IntradayHour::from_beta(&beta))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntradayModel { hours })
}

/// `base + intercept + Σ coef_l · r_{t−l}`.
pub fn apply_intraday(
    model: &IntradayModel,
    base: f64,
    series: &ResidualSeries,
    t: usize,
) -> Result<f64> {
    let lags = series.lags(t)?;
    Ok(base + model.hours[series.hour(t) as usize].correction(&lags))
}

/// Intraday model refitted on all residuals seen so far.
///
/// Targets are added in index order as their residuals become known; each
/// hour keeps its own normal equations and is refitted when it gains rows.
/// Hours without a usable fit yet apply no correction.
#[derive(Debug, Clone)]
pub struct RollingIntraday {
    acc: Vec<NormalEquations>,
    fitted: Vec<Option<IntradayHour>>,
    dirty: Vec<bool>,
    next: usize,
    min_rows: usize,
}

impl Default for RollingIntraday {
    fn default() -> Self {
        Self::new(2 * (NUM_LAGS + 1))
    }
}

impl RollingIntraday {
    pub fn new(min_rows: usize) -> Self {
        Self {
            acc: (0..24)
                .map(|_| NormalEquations::new(NUM_LAGS + 1))
                .collect(),
            fitted: vec![None; 24],
            dirty: vec![false; 24],
            next: 0,
            min_rows: min_rows.max(NUM_LAGS + 1),
        }
    }

    /// Adds every target index below `upto` not yet seen, then refits.
    pub fn advance(&mut self, series: &ResidualSeries, upto: usize) {
        let upto = upto.min(series.len());
        for t in self.next..upto {
            if let Some((x, y)) = series.design_row(t) {
                let h = series.hour(t) as usize;
                self.acc[h].add(&x, y);
                self.dirty[h] = true;
            }
        }
        self.next = self.next.max(upto);
        for h in 0..24 {
            if self.dirty[h] && self.acc[h].n >= self.min_rows {
                if let Ok(beta) = self.acc[h].solve() {
                    self.fitted[h] = Some(IntradayHour::from_beta(&beta));
                }
            }
            self.dirty[h] = false;
        }
    }

    pub fn hour_model(&self, hour: u32) -> Option<&IntradayHour> {
        self.fitted[hour as usize].as_ref()
    }

    /// Corrected forecast, or `base` while the hour has no fit.
    pub fn correct(&self, base: f64, series: &ResidualSeries, t: usize) -> Result<f64> {
        match self.hour_model(series.hour(t)) {
            Some(m) => Ok(base + m.correction(&series.lags(t)?)),
            None => Ok(base),
        }
    }

    pub fn snapshot(&self) -> IntradayModel {
        IntradayModel {
            hours: self
                .fitted
                .iter()
                .map(|m| m.clone().unwrap_or_else(IntradayHour::zero))
                .collect(),
        }
    }
}
