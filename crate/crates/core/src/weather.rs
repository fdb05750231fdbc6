//! Statistical correction of raw weather forecasts.
//!
//! A corrected forecast is a linear model on the raw forecast, the last
//! available residual lags (daily and hourly) and the last available daily
//! lag of the observed variable:
//!
//! `z_t = α ẑ_t + Σ_l β_l (z_{t-l} − ẑ_{t-l}) + γ z_{t-l0(t)} + δ`
//!
//! Orders `(p, P)` are picked by BIC. Temperature gets one model per hour
//! of day; cloud cover, pressure and wind speed share slopes across hours
//! with hour-specific intercepts. Wind direction is never corrected.

use chrono::NaiveDateTime;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{HourlyDataset, WeatherInputs, WeatherVar};
use crate::error::{Error, Result};

/// Ridge penalty used when a candidate design is singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// Residual lags used for a target hour, split by origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagSet {
    /// Last `P` available daily lags.
    pub daily: Vec<usize>,
    /// Last `p` available hourly lags.
    pub hourly: Vec<usize>,
}

impl LagSet {
    /// Union of both parts, duplicates removed, daily lags first.
    pub fn lags(&self) -> Vec<usize> {
        let mut out = self.daily.clone();
        for l in &self.hourly {
            if !out.contains(l) {
                out.push(*l);
            }
        }
        out
    }
}

/// `{24,…,24P} ∪ {h+17,…,h+16+p}` for `h ≤ 7`, `{48,…,24(P+1)} ∪ {h+17,…,h+16+p}` otherwise.
pub fn lag_set(p: usize, big_p: usize, hour: u32) -> LagSet {
    let h = hour as usize;
    let first_daily = if hour <= 7 { 1 } else { 2 };
    LagSet {
        daily: (0..big_p).map(|j| 24 * (first_daily + j)).collect(),
        hourly: (1..=p).map(|k| h + 16 + k).collect(),
    }
}

/// Last available daily lag of the variable itself.
pub fn base_lag(hour: u32) -> usize {
    if hour <= 7 {
        24
    } else {
        48
    }
}

/// A lag is visible at 8AM of the previous day when it reaches back at
/// least `h + 16` hours.
pub fn lag_is_available(hour: u32, lag: usize) -> bool {
    lag >= hour as usize + 16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderGrid {
    pub p_max: usize,
    pub big_p_max: usize,
}

impl Default for OrderGrid {
    fn default() -> Self {
        Self {
            p_max: 8,
            big_p_max: 7,
        }
    }
}

/// Coefficients applied at one hour of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourModel {
    pub p: usize,
    #[serde(rename = "P")]
    pub big_p: usize,
    pub alpha: f64,
    pub lags: Vec<usize>,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
    /// BIC of the selected orders; absent for hand-built models.
    pub bic: Option<f64>,
}

impl HourModel {
    pub fn identity(hour: u32) -> Self {
        let _ = hour;
        Self {
            p: 0,
            big_p: 0,
            alpha: 1.0,
            lags: vec![],
            beta: vec![],
            gamma: 0.0,
            delta: 0.0,
            bic: None,
        }
    }

    pub fn coefficient_count(&self) -> usize {
        self.lags.len() + 3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherCorrectionModel {
    pub variable: WeatherVar,
    /// Slopes shared across hours (only intercepts differ).
    pub shared: bool,
    /// One entry per hour of day.
    pub hours: Vec<HourModel>,
}

impl WeatherCorrectionModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn hour(&self, hour: u32) -> &HourModel {
        &self.hours[hour as usize]
    }
}

/// Columns of the widest candidate: forecast, base lag, daily and hourly
/// residual lags by position, then intercept(s).
struct Design {
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    hours: Vec<u32>,
    big_p_max: usize,
    p_max: usize,
    intercepts: usize,
}

impl Design {
    fn daily_col(&self, j: usize) -> usize {
        2 + j
    }
    fn hourly_col(&self, k: usize) -> usize {
        2 + self.big_p_max + k
    }
    fn intercept_col(&self, i: usize) -> usize {
        2 + self.big_p_max + self.p_max + i
    }
    fn width(&self) -> usize {
        2 + self.big_p_max + self.p_max + self.intercepts
    }
}

fn observed_at(ds: &HourlyDataset, var: WeatherVar, i: usize, lag: usize) -> Option<f64> {
    i.checked_sub(lag)
        .and_then(|j| var.observed(&ds.records()[j]))
}

fn residual_at(ds: &HourlyDataset, var: WeatherVar, i: usize, lag: usize) -> Option<f64> {
    let j = i.checked_sub(lag)?;
    let r = &ds.records()[j];
    var.observed(r).map(|z| z - var.forecast(r))
}

fn build_design(
    ds: &HourlyDataset,
    var: WeatherVar,
    train_end: NaiveDateTime,
    grid: OrderGrid,
    hour_filter: Option<u32>,
    intercepts: usize,
) -> Design {
    let mut d = Design {
        rows: vec![],
        targets: vec![],
        hours: vec![],
        big_p_max: grid.big_p_max,
        p_max: grid.p_max,
        intercepts,
    };
    for (i, r) in ds.records().iter().enumerate() {
        if r.timestamp >= train_end {
            break;
        }
        let h = r.hour();
        if hour_filter.is_some_and(|f| f != h) || r.interpolated {
            continue;
        }
        let Some(z) = var.observed(r) else { continue };
        let Some(base) = observed_at(ds, var, i, base_lag(h)) else {
            continue;
        };
        let lags = lag_set(grid.p_max, grid.big_p_max, h);
        let daily: Option<Vec<f64>> = lags
            .daily
            .iter()
            .map(|&l| residual_at(ds, var, i, l))
            .collect();
        let hourly: Option<Vec<f64>> = lags
            .hourly
            .iter()
            .map(|&l| residual_at(ds, var, i, l))
            .collect();
        let (Some(daily), Some(hourly)) = (daily, hourly) else {
            continue;
        };
        let mut row = Vec::with_capacity(d.width());
        row.push(var.forecast(r));
        row.push(base);
        row.extend(daily);
        row.extend(hourly);
        for k in 0..intercepts {
            row.push(if intercepts == 1 || k == h as usize {
                1.0
            } else {
                0.0
            });
        }
        d.rows.push(row);
        d.targets.push(z);
        d.hours.push(h);
    }
    d
}

/// Least squares restricted to `cols`, with the ridge fallback.
fn solve_columns(gram: &DMatrix<f64>, xty: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    let k = cols.len();
    let scales: Vec<f64> = cols
        .iter()
        .map(|&c| {
            let s = gram[(c, c)].sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let a = DMatrix::from_fn(k, k, |i, j| {
        gram[(cols[i], cols[j])] / (scales[i] * scales[j])
    });
    let b = DVector::from_fn(k, |i, _| xty[cols[i]] / scales[i]);
    let chol = a.clone().cholesky().filter(|c| {
        let l = c.l_dirty();
        (0..k).all(|i| l[(i, i)] * l[(i, i)] > 1e-12)
    });
    let sol = match chol {
        Some(c) => c.solve(&b),
        None => (a + DMatrix::identity(k, k) * RIDGE_FALLBACK)
            .cholesky()
            .map(|c| c.solve(&b))
            .unwrap_or_else(|| DVector::zeros(k)),
    };
    DVector::from_fn(k, |i, _| sol[i] / scales[i])
}

fn bic(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss.max(f64::MIN_POSITIVE) / n).ln() + k as f64 * n.ln()
}

struct Candidate {
    p: usize,
    big_p: usize,
    cols: Vec<usize>,
    coef: DVector<f64>,
    bic: f64,
}

/// Scans the full `(p, P)` grid; ties keep the earlier (smaller) candidate.
fn select(design: &Design, grid: OrderGrid, dedupe_hour: Option<u32>) -> Result<Candidate> {
    let n = design.rows.len();
    let w = design.width();
    let x = DMatrix::from_fn(n, w, |i, j| design.rows[i][j]);
    let y = DVector::from_vec(design.targets.clone());
    let gram = x.transpose() * &x;
    let xty = x.transpose() * &y;

    let mut best: Option<Candidate> = None;
    for p in 0..=grid.p_max {
        for big_p in 0..=grid.big_p_max {
            let mut cols = vec![0usize, 1];
            cols.extend((0..big_p).map(|j| design.daily_col(j)));
            let daily_lags = dedupe_hour.map(|h| lag_set(0, big_p, h).daily);
            for k in 0..p {
                if let (Some(h), Some(daily)) = (dedupe_hour, &daily_lags) {
                    if daily.contains(&(h as usize + 17 + k)) {
                        continue;
                    }
                }
                cols.push(design.hourly_col(k));
            }
            cols.extend((0..design.intercepts).map(|i| design.intercept_col(i)));
            let k = cols.len();
            if n <= k {
                continue;
            }
            let coef = solve_columns(&gram, &xty, &cols);
            let rss: f64 = design
                .rows
                .iter()
                .zip(&design.targets)
                .map(|(row, t)| {
                    let fit: f64 = cols.iter().zip(coef.iter()).map(|(&c, b)| row[c] * b).sum();
                    (t - fit).powi(2)
                })
                .sum();
            let score = bic(rss, n, k);
            if best.as_ref().is_none_or(|b| score < b.bic) {
                best = Some(Candidate {
                    p,
                    big_p,
                    cols,
                    coef,
                    bic: score,
                });
            }
        }
    }
    best.ok_or_else(|| Error::InsufficientHistory("not enough rows for any candidate order".into()))
}

fn hour_model_from(design: &Design, c: &Candidate, hour: u32, intercept: f64) -> HourModel {
    let lagset = lag_set(design.p_max, design.big_p_max, hour);
    let mut lags: Vec<usize> = vec![];
    let mut beta: Vec<f64> = vec![];
    let mut alpha = 0.0;
    let mut gamma = 0.0;
    for (&col, &b) in c.cols.iter().zip(c.coef.iter()) {
        let lag = if col == 0 {
            alpha = b;
            continue;
        } else if col == 1 {
            gamma = b;
            continue;
        } else if col < design.hourly_col(0) {
            lagset.daily[col - 2]
        } else if col < design.intercept_col(0) {
            lagset.hourly[col - design.hourly_col(0)]
        } else {
            continue;
        };
        match lags.iter().position(|&l| l == lag) {
            Some(pos) => beta[pos] += b,
            None => {
                lags.push(lag);
                beta.push(b);
            }
        }
    }
    HourModel {
        p: c.p,
        big_p: c.big_p,
        alpha,
        lags,
        beta,
        gamma,
        delta: intercept,
        bic: Some(c.bic),
    }
}

/// Fits a correction model on data strictly before `train_end`.
pub fn fit_correction(
    ds: &HourlyDataset,
    variable: WeatherVar,
    train_end: NaiveDateTime,
    grid: OrderGrid,
) -> Result<WeatherCorrectionModel> {
    match variable {
        WeatherVar::WindDir => Err(Error::UncorrectedVariable(variable.name().into())),
        WeatherVar::Temperature => {
            let hours = (0..24u32)
                .map(|h| {
                    let design = build_design(ds, variable, train_end, grid, Some(h), 1);
                    if design.rows.len() < 2 * design.width() {
                        return Err(Error::InsufficientHistory(format!(
                            "{} rows for hour {h}",
                            design.rows.len()
                        )));
                    }
                    let best = select(&design, grid, Some(h))?;
                    let intercept = best.coef[best.cols.len() - 1];
                    Ok(hour_model_from(&design, &best, h, intercept))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WeatherCorrectionModel {
                variable,
                shared: false,
                hours,
            })
        }
        _ => {
            let design = build_design(ds, variable, train_end, grid, None, 24);
            if design.rows.len() < 2 * design.width() || (0..24).any(|h| !design.hours.contains(&h))
            {
                return Err(Error::InsufficientHistory(format!(
                    "{} pooled rows",
                    design.rows.len()
                )));
            }
            let best = select(&design, grid, None)?;
            let k = best.cols.len();
            let hours = (0..24u32)
                .map(|h| {
                    let intercept = best.coef[k - 24 + h as usize];
                    hour_model_from(&design, &best, h, intercept)
                })
                .collect();
            Ok(WeatherCorrectionModel {
                variable,
                shared: true,
                hours,
            })
        }
    }
}

/// Corrected forecast for row `t`.
pub fn apply_correction(
    model: &WeatherCorrectionModel,
    ds: &HourlyDataset,
    t: usize,
) -> Result<f64> {
    let var = model.variable;
    let r = ds.get(t).ok_or(Error::DimensionMismatch {
        expected: ds.len(),
        found: t,
    })?;
    let h = r.hour();
    let m = model.hour(h);
    let missing = |lag| Error::MissingLag {
        timestamp: r.timestamp,
        lag,
    };
    let mut value = m.alpha * var.forecast(r) + m.delta;
    for (&lag, b) in m.lags.iter().zip(&m.beta) {
        debug_assert!(lag_is_available(h, lag));
        value += b * residual_at(ds, var, t, lag).ok_or_else(|| missing(lag))?;
    }
    if m.gamma != 0.0 {
        let l0 = base_lag(h);
        value += m.gamma * observed_at(ds, var, t, l0).ok_or_else(|| missing(l0))?;
    }
    Ok(value)
}

/// Corrected series over the whole dataset; rows whose lags are missing keep the raw forecast.
pub fn corrected_series(model: &WeatherCorrectionModel, ds: &HourlyDataset) -> Vec<f64> {
    (0..ds.len())
        .map(|t| {
            apply_correction(model, ds, t)
                .unwrap_or_else(|_| model.variable.forecast(&ds.records()[t]))
        })
        .collect()
}

/// Fits every correctable variable and returns the corrected covariates.
pub fn correct_weather(
    ds: &HourlyDataset,
    train_end: NaiveDateTime,
    grid: OrderGrid,
) -> Result<(WeatherInputs, Vec<WeatherCorrectionModel>)> {
    let mut inputs = WeatherInputs::raw_forecasts(ds);
    let mut models = Vec::new();
    for var in [
        WeatherVar::Temperature,
        WeatherVar::Cloud,
        WeatherVar::Pressure,
        WeatherVar::WindSpeed,
    ] {
        let model = fit_correction(ds, var, train_end, grid)
            .map_err(|e| e.context(format!("correcting {}", var.name())))?;
        let series = corrected_series(&model, ds);
        match var {
            WeatherVar::Temperature => inputs.temp = series,
            WeatherVar::Cloud => {
                inputs.cloud = series.into_iter().map(|v| v.clamp(0.0, 100.0)).collect()
            }
            WeatherVar::Pressure => inputs.pressure = series,
            WeatherVar::WindSpeed => {
                inputs.wind_speed = series.into_iter().map(|v| v.max(0.0)).collect()
            }
            WeatherVar::WindDir => unreachable!(),
        }
        models.push(model);
    }
    Ok((inputs, models))
}

/// Mean absolute errors of the raw forecast, the last daily lag, and the
/// corrected forecast over rows `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionScores {
    pub raw: f64,
    pub last_daily_lag: f64,
    pub corrected: f64,
    pub rows: usize,
}

pub fn score_correction(
    model: &WeatherCorrectionModel,
    ds: &HourlyDataset,
    from: usize,
    to: usize,
) -> Result<CorrectionScores> {
    let var = model.variable;
    let (mut raw, mut lag, mut cor, mut n) = (0.0, 0.0, 0.0, 0usize);
    for t in from..to.min(ds.len()) {
        let r = &ds.records()[t];
        let (Some(z), Some(z0)) = (var.observed(r), observed_at(ds, var, t, base_lag(r.hour())))
        else {
            continue;
        };
        let Ok(c) = apply_correction(model, ds, t) else {
            continue;
        };
        raw += (var.forecast(r) - z).abs();
        lag += (z0 - z).abs();
        cor += (c - z).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyWindow);
    }
    let n_f = n as f64;
    Ok(CorrectionScores {
        raw: raw / n_f,
        last_daily_lag: lag / n_f,
        corrected: cor / n_f,
        rows: n,
    })
}
