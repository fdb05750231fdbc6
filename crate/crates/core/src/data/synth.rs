//! Synthetic hourly scenarios: weather with a known forecast-error
//! structure and a load that is linear in weather and calendar terms, with
//! an optional coefficient switch at a break date.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::time_of_year;
use super::record::{HourlyDataset, HourlyRecord};
use crate::error::{Error, Result};
use crate::weather::{base_lag, lag_set};

/// Coefficients of the generating load model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadCoefficients {
    /// Intercept per hour of day (24 values).
    pub hourly_profile: Vec<f64>,
    /// Additive effect per day of week, Monday first (7 values).
    pub day_of_week: Vec<f64>,
    pub temp: f64,
    pub cloud: f64,
    pub pressure: f64,
    pub wind_speed: f64,
    /// Load increase per 8760 hours since the start of the scenario.
    pub trend_per_year: f64,
}

impl Default for LoadCoefficients {
    fn default() -> Self {
        let hourly_profile = (0..24)
            .map(|h| {
                let x = h as f64;
                900.0
                    + 180.0 * (-(x - 11.0).powi(2) / 18.0).exp()
                    + 220.0 * (-(x - 19.0).powi(2) / 6.0).exp()
            })
            .collect();
        Self {
            hourly_profile,
            day_of_week: vec![20.0, 25.0, 25.0, 22.0, 10.0, -60.0, -90.0],
            temp: -9.0,
            cloud: 0.6,
            pressure: 2.0,
            wind_speed: 1.5,
            trend_per_year: 15.0,
        }
    }
}

impl LoadCoefficients {
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * factor).collect();
        Self {
            hourly_profile: s(&self.hourly_profile),
            day_of_week: s(&self.day_of_week),
            temp: self.temp * factor,
            cloud: self.cloud * factor,
            pressure: self.pressure * factor,
            wind_speed: self.wind_speed * factor,
            trend_per_year: self.trend_per_year * factor,
        }
    }

    /// Noise-free load for the given covariates.
    pub fn evaluate(
        &self,
        hour: u32,
        day_of_week: u32,
        weather: [f64; 4],
        hours_since_start: f64,
    ) -> f64 {
        let [temp, cloud, pressure, wind_speed] = weather;
        self.hourly_profile[hour as usize]
            + self.day_of_week[day_of_week as usize]
            + self.temp * temp
            + self.cloud * cloud
            + self.pressure * pressure
            + self.wind_speed * wind_speed
            + self.trend_per_year * hours_since_start / 8760.0
    }

    fn validate(&self) -> Result<()> {
        if self.hourly_profile.len() != 24 || self.day_of_week.len() != 7 {
            return Err(Error::InvalidScenario(
                "hourly_profile needs 24 values and day_of_week 7".into(),
            ));
        }
        Ok(())
    }
}

/// One weather variable: a smooth physical forecast and a realisation
/// generated from it with the residual-autoregressive correction structure
/// `z = alpha*zhat + Σ daily_j r_{t-l} + Σ hourly_k r_{t-l} + gamma*z_{t-l0} + delta + eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableScenario {
    pub mean: f64,
    pub seasonal_amplitude: f64,
    pub daily_amplitude: f64,
    /// Std of the slowly varying weather signal seen by the forecast.
    pub signal_std: f64,
    pub alpha: f64,
    /// Coefficients on the last available daily residual lags.
    pub daily: Vec<f64>,
    /// Coefficients on the last available hourly residual lags.
    pub hourly: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub noise_std: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl VariableScenario {
    /// Realisation equals the forecast.
    pub fn perfect(
        mean: f64,
        seasonal_amplitude: f64,
        daily_amplitude: f64,
        signal_std: f64,
    ) -> Self {
        Self {
            mean,
            seasonal_amplitude,
            daily_amplitude,
            signal_std,
            alpha: 1.0,
            daily: vec![],
            hourly: vec![],
            gamma: 0.0,
            delta: 0.0,
            noise_std: 0.0,
            min: None,
            max: None,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let all = [
            self.mean,
            self.seasonal_amplitude,
            self.daily_amplitude,
            self.signal_std,
            self.alpha,
            self.gamma,
            self.delta,
            self.noise_std,
        ];
        if all
            .iter()
            .chain(&self.daily)
            .chain(&self.hourly)
            .any(|v| !v.is_finite())
            || self.signal_std < 0.0
            || self.noise_std < 0.0
        {
            return Err(Error::InvalidScenario(format!(
                "{name}: non-finite or negative scale"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherScenario {
    pub temperature: VariableScenario,
    pub cloud: VariableScenario,
    pub pressure: VariableScenario,
    pub wind_speed: VariableScenario,
    /// Std in degrees of the hourly wind-direction random walk.
    pub wind_dir_step_std: f64,
    /// Std in degrees of the wind-direction forecast error.
    pub wind_dir_error_std: f64,
}

impl Default for WeatherScenario {
    fn default() -> Self {
        let structured = |mean, seas, daily_amp, sig, alpha, delta, noise| VariableScenario {
            mean,
            seasonal_amplitude: seas,
            daily_amplitude: daily_amp,
            signal_std: sig,
            alpha,
            daily: vec![0.6],
            hourly: vec![0.3],
            gamma: 0.05,
            delta,
            noise_std: noise,
            min: None,
            max: None,
        };
        let mut cloud = structured(50.0, 10.0, 5.0, 15.0, 0.9, 4.0, 8.0);
        cloud.min = Some(0.0);
        cloud.max = Some(100.0);
        let mut wind = structured(15.0, 3.0, 2.0, 4.0, 0.85, 1.5, 2.0);
        wind.min = Some(0.0);
        Self {
            temperature: structured(12.0, 9.0, 4.0, 2.5, 0.9, 1.0, 1.0),
            cloud,
            pressure: structured(101.3, 0.3, 0.05, 0.5, 0.95, 4.0, 0.2),
            wind_speed: wind,
            wind_dir_step_std: 8.0,
            wind_dir_error_std: 20.0,
        }
    }
}

impl WeatherScenario {
    /// Forecasts equal realisations for every variable.
    pub fn perfect() -> Self {
        Self {
            temperature: VariableScenario::perfect(12.0, 9.0, 4.0, 2.5),
            cloud: VariableScenario {
                min: Some(0.0),
                max: Some(100.0),
                ..VariableScenario::perfect(50.0, 10.0, 5.0, 10.0)
            },
            pressure: VariableScenario::perfect(101.3, 0.3, 0.05, 0.5),
            wind_speed: VariableScenario {
                min: Some(0.0),
                ..VariableScenario::perfect(15.0, 3.0, 2.0, 3.0)
            },
            wind_dir_step_std: 8.0,
            wind_dir_error_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub start: NaiveDate,
    pub days: usize,
    #[serde(default)]
    pub coefficients: LoadCoefficients,
    /// Coefficients switch at this timestamp (inclusive).
    #[serde(default)]
    pub break_at: Option<NaiveDateTime>,
    /// Post-break coefficients; defaults to `coefficients` scaled by `break_scale`.
    #[serde(default)]
    pub coefficients_after: Option<LoadCoefficients>,
    #[serde(default)]
    pub break_scale: Option<f64>,
    pub noise_std: f64,
    /// Hourly AR(1) coefficient of the load noise.
    #[serde(default)]
    pub noise_ar: f64,
    #[serde(default)]
    pub weather: WeatherScenario,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
            days: 3 * 365,
            coefficients: LoadCoefficients::default(),
            break_at: None,
            coefficients_after: None,
            break_scale: None,
            noise_std: 10.0,
            noise_ar: 0.0,
            weather: WeatherScenario::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn end(&self) -> NaiveDateTime {
        self.start.and_hms_opt(0, 0, 0).unwrap() + Duration::hours(self.days as i64 * 24 - 1)
    }

    fn after_coefficients(&self) -> LoadCoefficients {
        match (&self.coefficients_after, self.break_scale) {
            (Some(c), _) => c.clone(),
            (None, Some(s)) => self.coefficients.scaled(s),
            (None, None) => self.coefficients.clone(),
        }
    }

    /// Generating coefficients in force at `t`.
    pub fn coefficients_at(&self, t: NaiveDateTime) -> LoadCoefficients {
        match self.break_at {
            Some(b) if t >= b => self.after_coefficients(),
            _ => self.coefficients.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::InvalidScenario("days must be positive".into()));
        }
        self.coefficients.validate()?;
        if let Some(c) = &self.coefficients_after {
            c.validate()?;
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidScenario(
                "noise_std must be finite and non-negative".into(),
            ));
        }
        if !(self.noise_ar.abs() < 1.0) {
            return Err(Error::InvalidScenario(
                "noise_ar must lie in (-1, 1)".into(),
            ));
        }
        if let Some(s) = self.break_scale {
            if !s.is_finite() {
                return Err(Error::InvalidScenario("break_scale must be finite".into()));
            }
        }
        if let Some(b) = self.break_at {
            let start = self.start.and_hms_opt(0, 0, 0).unwrap();
            if b <= start || b > self.end() {
                return Err(Error::InvalidScenario(
                    "break_at outside the scenario span".into(),
                ));
            }
        }
        let w = &self.weather;
        w.temperature.validate("temperature")?;
        w.cloud.validate("cloud")?;
        w.pressure.validate("pressure")?;
        w.wind_speed.validate("wind_speed")?;
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Forecast and realisation series for one weather variable.
fn gen_variable(
    v: &VariableScenario,
    times: &[NaiveDateTime],
    seasonal_phase: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let n = times.len();
    let phi: f64 = 0.995;
    let innov = v.signal_std * (1.0 - phi * phi).sqrt();
    let mut u = v.signal_std * gaussian(rng);
    let mut fc = Vec::with_capacity(n);
    for t in times {
        u = phi * u + innov * gaussian(rng);
        let season = (2.0 * std::f64::consts::PI * (time_of_year(*t) - seasonal_phase)).cos();
        let day = (2.0 * std::f64::consts::PI * (t.hour() as f64 - 15.0) / 24.0).cos();
        fc.push(v.mean + v.seasonal_amplitude * season + v.daily_amplitude * day + u);
    }
    let mut obs: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let h = times[i].hour();
        let lags = lag_set(v.hourly.len(), v.daily.len(), h);
        let resid = |l: usize| if i >= l { obs[i - l] - fc[i - l] } else { 0.0 };
        let mut z = v.alpha * fc[i] + v.delta + v.noise_std * gaussian(rng);
        for (c, &l) in v.daily.iter().zip(&lags.daily) {
            z += c * resid(l);
        }
        for (c, &l) in v.hourly.iter().zip(&lags.hourly) {
            z += c * resid(l);
        }
        let l0 = base_lag(h);
        z += v.gamma * if i >= l0 { obs[i - l0] } else { fc[i] };
        obs.push(z);
    }
    let clamp = |x: f64| {
        let x = v.min.map_or(x, |m| x.max(m));
        v.max.map_or(x, |m| x.min(m))
    };
    (
        fc.into_iter().map(clamp).collect(),
        obs.into_iter().map(clamp).collect(),
    )
}

/// Deterministic for a given `(cfg, seed)`.
pub fn gen_synthetic(cfg: &ScenarioConfig, seed: u64) -> Result<HourlyDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = cfg.start.and_hms_opt(0, 0, 0).unwrap();
    let n = cfg.days * 24;
    let times: Vec<NaiveDateTime> = (0..n).map(|i| start + Duration::hours(i as i64)).collect();

    let w = &cfg.weather;
    let (temp_fc, temp_obs) = gen_variable(&w.temperature, &times, 0.55, &mut rng);
    let (cloud_fc, cloud_obs) = gen_variable(&w.cloud, &times, 0.05, &mut rng);
    let (pres_fc, pres_obs) = gen_variable(&w.pressure, &times, 0.3, &mut rng);
    let (ws_fc, ws_obs) = gen_variable(&w.wind_speed, &times, 0.05, &mut rng);

    let mut dir = 360.0 * rng.random::<f64>();
    let mut noise = 0.0;
    let innov_scale = (1.0 - cfg.noise_ar * cfg.noise_ar).sqrt();
    let before = cfg.coefficients.clone();
    let after = cfg.after_coefficients();

    let mut records = Vec::with_capacity(n);
    for (i, &t) in times.iter().enumerate() {
        dir = (dir + w.wind_dir_step_std * gaussian(&mut rng)).rem_euclid(360.0);
        let dir_fc = (dir + w.wind_dir_error_std * gaussian(&mut rng)).rem_euclid(360.0);
        noise = cfg.noise_ar * noise + innov_scale * gaussian(&mut rng);
        let coefs = match cfg.break_at {
            Some(b) if t >= b => &after,
            _ => &before,
        };
        let load = coefs.evaluate(
            t.hour(),
            t.weekday().num_days_from_monday(),
            [temp_obs[i], cloud_obs[i], pres_obs[i], ws_obs[i]],
            i as f64,
        ) + cfg.noise_std * noise;
        records.push(HourlyRecord {
            timestamp: t,
            load: Some(load),
            temp_fc: temp_fc[i],
            temp_obs: Some(temp_obs[i]),
            cloud_fc: cloud_fc[i],
            cloud_obs: Some(cloud_obs[i]),
            pressure_fc: pres_fc[i],
            pressure_obs: Some(pres_obs[i]),
            wind_speed_fc: ws_fc[i],
            wind_speed_obs: Some(ws_obs[i]),
            wind_dir_fc: dir_fc,
            wind_dir_obs: Some(dir),
            interpolated: false,
        });
    }
    HourlyDataset::new(records)
}
