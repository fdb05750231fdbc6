//! Per-hour base forecasters and their adaptation feature maps.
//!
//! Every family fits 24 independent models, one per hour of the day. Each
//! model also exposes a feature vector `x_t` whose coordinates are the
//! frozen effects of the fitted model, so that the offline forecast is a
//! fixed linear function of `x_t` and a state-space model can re-weight
//! those effects online.

mod gam;
mod mlp;
pub mod spline;

use chrono::NaiveDateTime;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use gam::{GamConfig, GamHour, GamModel};
pub use mlp::{Mlp, MlpConfig, MlpModel, MLP_INPUTS};

use crate::data::{load_d_lag, FeatureFrame, FeatureRow, WEEK};
use crate::error::{Error, Result};
use crate::linalg::{lstsq, lstsq_min_norm};

/// Number of weekly lags in the autoregressive model.
pub const AR_WEEKS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ar,
    Linear,
    Gam,
    /// The spline additive model evaluated as if every day were a Saturday.
    GamSat,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Ar,
        Family::Linear,
        Family::Gam,
        Family::GamSat,
        Family::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ar => "AR",
            Family::Linear => "Lin",
            Family::Gam => "GAM",
            Family::GamSat => "GAM_SAT",
            Family::Mlp => "MLP",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    #[serde(default)]
    pub gam: GamConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
}

/// Indices of rows usable for training hour `hour` before `train_end`.
pub fn training_rows(frame: &FeatureFrame, train_end: NaiveDateTime, hour: u32) -> Vec<usize> {
    frame
        .rows()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.timestamp < train_end && r.hour == hour && r.trainable())
        .map(|(i, _)| i)
        .collect()
}

/// Daily lags of the autoregressive model for `hour`.
pub fn ar_daily_lags(hour: u32) -> [usize; 3] {
    let first = load_d_lag(hour);
    [first, first + 24, first + 48]
}

fn ar_features(frame: &FeatureFrame, i: usize) -> Option<Vec<f64>> {
    let hour = frame.row(i).hour;
    let mut x = Vec::with_capacity(10);
    for lag in ar_daily_lags(hour) {
        x.push(frame.lagged_load(i, lag)?);
    }
    for l in 1..=AR_WEEKS {
        x.push(frame.lagged_load(i, WEEK * l)?);
    }
    x.push(1.0);
    Some(x)
}

/// Covariates of the linear model, intercept last.
pub const LINEAR_COVARIATES: [&str; 17] = [
    "temp",
    "cloud",
    "pressure",
    "wind_speed",
    "wind_dir_sin",
    "wind_dir_cos",
    "mon",
    "tue",
    "wed",
    "thu",
    "fri",
    "sat",
    "toy",
    "trend",
    "load_d",
    "load_w",
    "intercept",
];

fn linear_features(r: &FeatureRow) -> Option<Vec<f64>> {
    let mut x = vec![
        r.temp,
        r.cloud,
        r.pressure,
        r.wind_speed,
        r.wind_dir_sin(),
        r.wind_dir_cos(),
    ];
    // Sunday is the baseline day
    for d in 0..6 {
        x.push(if r.day_of_week == d { 1.0 } else { 0.0 });
    }
    x.extend([r.toy, r.trend, r.load_d?, r.load_w?, 1.0]);
    Some(x)
}

/// Per-hour ordinary least squares on a fixed covariate map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// One coefficient vector per hour.
    pub coef: Vec<Vec<f64>>,
}

impl LinearModel {
    fn fit(
        frame: &FeatureFrame,
        train_end: NaiveDateTime,
        features: impl Fn(&FeatureFrame, usize) -> Option<Vec<f64>>,
    ) -> Result<Self> {
        let coef = (0..24u32)
            .map(|h| {
                let (rows, ys): (Vec<Vec<f64>>, Vec<f64>) = training_rows(frame, train_end, h)
                    .into_iter()
                    .filter_map(|i| Some((features(frame, i)?, frame.row(i).load?)))
                    .unzip();
                let width = rows.first().map_or(0, Vec::len);
                if rows.len() < width.max(1) * 2 {
                    return Err(Error::InsufficientHistory(format!(
                        "{} training rows for hour {h}",
                        rows.len()
                    )));
                }
                let x = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
                let y = DVector::from_vec(ys);
                // exactly collinear lags (constant or periodic loads) still have a well-defined fit
                let beta = match lstsq(&x, &y) {
                    Err(Error::SingularDesign) => lstsq_min_norm(&x, &y),
                    other => other,
                }
                .map_err(|e| e.context(format!("hour {h}")))?;
                Ok(beta.iter().copied().collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { coef })
    }
}

/// A fitted expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ExpertModel {
    Ar(LinearModel),
    Linear(LinearModel),
    Gam(GamModel),
    GamSat(GamModel),
    Mlp(MlpModel),
}

/// Seasonal autoregression on daily lags {24,48,72} (hours ≤ 7) or
/// {48,72,96}, six weekly lags and an intercept.
pub fn fit_ar(frame: &FeatureFrame, train_end: NaiveDateTime) -> Result<ExpertModel> {
    Ok(ExpertModel::Ar(LinearModel::fit(
        frame,
        train_end,
        ar_features,
    )?))
}

/// Linear regression on weather, calendar, trend and the two load lags.
pub fn fit_linear(frame: &FeatureFrame, train_end: NaiveDateTime) -> Result<ExpertModel> {
    Ok(ExpertModel::Linear(LinearModel::fit(
        frame,
        train_end,
        |f, i| linear_features(f.row(i)),
    )?))
}

pub fn fit_spline_additive(
    frame: &FeatureFrame,
    train_end: NaiveDateTime,
    cfg: &GamConfig,
) -> Result<ExpertModel> {
    Ok(ExpertModel::Gam(GamModel::fit(frame, train_end, cfg)?))
}

pub fn fit_mlp(
    frame: &FeatureFrame,
    train_end: NaiveDateTime,
    cfg: &MlpConfig,
) -> Result<ExpertModel> {
    Ok(ExpertModel::Mlp(MlpModel::fit(frame, train_end, cfg)?))
}

impl ExpertModel {
    pub fn fit(
        family: Family,
        frame: &FeatureFrame,
        train_end: NaiveDateTime,
        cfg: &ExpertConfig,
    ) -> Result<Self> {
        match family {
            Family::Ar => fit_ar(frame, train_end),
            Family::Linear => fit_linear(frame, train_end),
            Family::Gam => fit_spline_additive(frame, train_end, &cfg.gam),
            Family::GamSat => Ok(ExpertModel::GamSat(GamModel::fit(
                frame, train_end, &cfg.gam,
            )?)),
            Family::Mlp => fit_mlp(frame, train_end, &cfg.mlp),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ExpertModel::Ar(_) => Family::Ar,
            ExpertModel::Linear(_) => Family::Linear,
            ExpertModel::Gam(_) => Family::Gam,
            ExpertModel::GamSat(_) => Family::GamSat,
            ExpertModel::Mlp(_) => Family::Mlp,
        }
    }

    /// Forcing the GAM day effect to Saturday turns it into the GAM_SAT expert.
    pub fn as_saturday(&self) -> Option<Self> {
        match self {
            ExpertModel::Gam(m) | ExpertModel::GamSat(m) => Some(ExpertModel::GamSat(m.clone())),
            _ => None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            ExpertModel::Ar(_) => ar_daily_lags(0).len() + AR_WEEKS + 1,
            ExpertModel::Linear(_) => LINEAR_COVARIATES.len(),
            ExpertModel::Gam(_) | ExpertModel::GamSat(_) => gam::FEATURE_DIM,
            ExpertModel::Mlp(m) => m.feature_dim(),
        }
    }

    /// Adaptation features `x_t` of row `i`; the last or first coordinate is 1.
    pub fn feature_map(&self, frame: &FeatureFrame, i: usize) -> Result<DVector<f64>> {
        let r = frame.row(i);
        let x = match self {
            ExpertModel::Ar(_) => ar_features(frame, i),
            ExpertModel::Linear(_) => linear_features(r),
            ExpertModel::Gam(m) => m.feature_map(r, false),
            ExpertModel::GamSat(m) => m.feature_map(r, true),
            ExpertModel::Mlp(m) => m.feature_map(r),
        };
        x.map(DVector::from_vec)
            .ok_or(Error::NotForecastable(r.timestamp))
    }

    /// Weights `θ*` with `θ*ᵀ x_t` equal to the offline forecast of `hour`.
    pub fn offline_state(&self, hour: u32) -> DVector<f64> {
        let h = hour as usize;
        match self {
            ExpertModel::Ar(m) | ExpertModel::Linear(m) => DVector::from_vec(m.coef[h].clone()),
            ExpertModel::Gam(m) | ExpertModel::GamSat(m) => m.offline_state(h),
            ExpertModel::Mlp(m) => m.offline_state(h),
        }
    }

    /// Offline forecast of row `i`.
    pub fn predict(&self, frame: &FeatureFrame, i: usize) -> Result<f64> {
        let x = self.feature_map(frame, i)?;
        Ok(self.offline_state(frame.row(i).hour).dot(&x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
