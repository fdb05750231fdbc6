use std::time::Instant;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use nalgebra::DVector;

use super::config::{ExpertSpec, PipelineConfig, Setting};
use super::report::{BacktestReport, RuntimeStats};
use crate::aggregation::{AggregationState, WeightRecord};
use crate::data::{
    build_features_with, forecast_cutoff, FeatureFrame, FeatureOptions, HourlyDataset,
    WeatherInputs, Window,
};
use crate::error::{Error, Result};
use crate::experts::{ExpertModel, Family};
use crate::intraday::{ResidualSeries, RollingIntraday};
use crate::kalman::{
    gaussian_quantile, make_setting, select_big_q, KalmanFilter, KalmanState, Observation,
    SettingInputs,
};
use crate::viking::{init_viking, VikingState};
use crate::weather::correct_weather;

/// Forecasts of every expert over the whole simulated span.
#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub timestamps: Vec<NaiveDateTime>,
    /// Observed load; `None` where missing or interpolated.
    pub actuals: Vec<Option<f64>>,
    pub names: Vec<String>,
    /// `forecasts[k][t]` for expert `k`.
    pub forecasts: Vec<Vec<Option<f64>>>,
    /// Names of the aggregated experts, empty when aggregation is off.
    pub aggregated: Vec<String>,
    pub aggregate: Vec<Option<f64>>,
    /// Weights used for each aggregated forecast in the test window.
    pub weights: Vec<WeightRecord>,
    pub days: usize,
}

impl Backtest {
    /// Restricts to `window`.
    pub fn report(&self, window: &Window, runtime: RuntimeStats) -> BacktestReport {
        let idx: Vec<usize> = (0..self.timestamps.len())
            .filter(|&t| window.contains(self.timestamps[t]))
            .collect();
        let pick = |v: &[Option<f64>]| idx.iter().map(|&t| v[t]).collect::<Vec<_>>();
        BacktestReport {
            window: *window,
            timestamps: idx.iter().map(|&t| self.timestamps[t]).collect(),
            actuals: pick(&self.actuals),
            experts: self
                .names
                .iter()
                .cloned()
                .zip(self.forecasts.iter().map(|f| pick(f)))
                .collect(),
            aggregate: (!self.aggregated.is_empty()).then(|| pick(&self.aggregate)),
            weights: self
                .weights
                .iter()
                .filter(|w| window.contains(w.timestamp))
                .cloned()
                .collect(),
            runtime,
        }
    }
}

/// Loads the data and runs the backtest; the report covers the test window.
pub fn run_backtest(cfg: &PipelineConfig) -> Result<BacktestReport> {
    let clock = Instant::now();
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let bt = simulate(cfg, &ds)?;
    let runtime = RuntimeStats {
        seconds: clock.elapsed().as_secs_f64(),
        days: bt.days,
        experts: bt.names.len(),
    };
    Ok(bt.report(&cfg.segmentation.test, runtime))
}

enum Adapter {
    Offline(Vec<DVector<f64>>),
    Kalman(Vec<KalmanFilter>),
    Viking(Vec<VikingState>),
}

/// One model with one way of adapting it; shared by every expert that
/// only differs in correction or quantile level.
struct Stream {
    family: Family,
    setting: Setting,
    adapter: Adapter,
    /// Predictive mean and variance of each forecast row.
    preds: Vec<Option<(f64, f64)>>,
    residuals: ResidualSeries,
    intraday: Option<RollingIntraday>,
}

impl Stream {
    fn label(&self) -> String {
        format!("{}_{}", self.family.name(), self.setting.name())
    }

    fn predict(&self, t: NaiveDateTime, hour: usize, x: &DVector<f64>) -> Result<(f64, f64)> {
        match &self.adapter {
            Adapter::Offline(theta) => Ok((theta[hour].dot(x), f64::NAN)),
            Adapter::Kalman(f) => f[hour].predict(t, x).map(|p| (p.mean, p.variance)),
            Adapter::Viking(v) => v[hour].predict(x).map(|p| (p.mean, p.variance)),
        }
    }

    fn update(
        &mut self,
        t: NaiveDateTime,
        hour: usize,
        x: &DVector<f64>,
        y: f64,
        iters: usize,
    ) -> Result<()> {
        match &mut self.adapter {
            Adapter::Offline(_) => Ok(()),
            Adapter::Kalman(f) => f[hour].update(t, x, y).map(|_| ()),
            Adapter::Viking(v) => v[hour].step(x, y, iters).map(|_| ()),
        }
    }
}

struct Member {
    stream: usize,
    intraday: bool,
    quantile: Option<f64>,
}

/// Corrected weather, features and fitted experts.
pub struct Prepared {
    pub frame: FeatureFrame,
    pub models: Vec<(Family, ExpertModel)>,
}

/// Weather correction, feature construction and offline fits, all on data
/// before the end of the training span.
pub fn prepare(cfg: &PipelineConfig, ds: &HourlyDataset, families: &[Family]) -> Result<Prepared> {
    let seg = &cfg.segmentation;
    let weather = if cfg.weather.correct {
        correct_weather(ds, seg.train_end, cfg.weather.grid)?.0
    } else {
        WeatherInputs::raw_forecasts(ds)
    };
    let opts = FeatureOptions {
        trend_end: Some(seg.train_end),
        weather: Some(weather),
    };
    let frame = build_features_with(ds, &opts)?;
    let mut models: Vec<(Family, ExpertModel)> = Vec::new();
    for &family in families {
        if models.iter().any(|(f, _)| *f == family) {
            continue;
        }
        // the Saturday variant reuses the spline additive fit
        let reuse = match family {
            Family::Gam | Family::GamSat => models
                .iter()
                .find(|(f, _)| matches!(f, Family::Gam | Family::GamSat))
                .map(|(_, m)| {
                    if family == Family::Gam {
                        gam_of(m)
                    } else {
                        m.as_saturday().unwrap()
                    }
                }),
            _ => None,
        };
        let model = match reuse {
            Some(m) => m,
            None => ExpertModel::fit(family, &frame, seg.train_end, &cfg.experts)
                .map_err(|e| e.context(format!("fitting {}", family.name())))?,
        };
        models.push((family, model));
    }
    Ok(Prepared { frame, models })
}

fn gam_of(m: &ExpertModel) -> ExpertModel {
    match m {
        ExpertModel::Gam(g) | ExpertModel::GamSat(g) => ExpertModel::Gam(g.clone()),
        other => other.clone(),
    }
}

/// Observed load usable as a target.
fn target(frame: &FeatureFrame, t: usize) -> Option<f64> {
    let r = frame.row(t);
    r.load.filter(|_| !r.interpolated)
}

fn observations(
    frame: &FeatureFrame,
    xs: &[Option<DVector<f64>>],
    hour: u32,
    end: NaiveDateTime,
) -> Vec<Observation> {
    (0..frame.len())
        .filter(|&t| frame.row(t).hour == hour && frame.row(t).timestamp < end)
        .filter_map(|t| {
            Some(Observation {
                timestamp: frame.row(t).timestamp,
                x: xs[t].clone()?,
                y: target(frame, t)?,
            })
        })
        .collect()
}

fn build_adapter(
    cfg: &PipelineConfig,
    setting: Setting,
    model: &ExpertModel,
    frame: &FeatureFrame,
    xs: &[Option<DVector<f64>>],
) -> Result<Adapter> {
    let seg = &cfg.segmentation;
    let grid = cfg.kalman.grid;
    let big_window_start = seg.adaptation_start - Duration::days(cfg.kalman.big_window_days);
    match setting {
        Setting::Offline => Ok(Adapter::Offline(
            (0..24).map(|h| model.offline_state(h)).collect(),
        )),
        Setting::Viking => {
            let d = model.feature_dim();
            let states = (0..24u32)
                .map(|h| {
                    let history = observations(frame, xs, h, seg.adaptation_start);
                    let q = select_big_q(&history, big_window_start, grid)
                        .map_err(|e| e.context(format!("hour {h}")))?;
                    init_viking(&KalmanState::standard(d), q, &cfg.viking)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Adapter::Viking(states))
        }
        _ => {
            let kind = setting.kalman().expect("state-space setting");
            let filters = (0..24u32)
                .map(|h| {
                    let train = observations(frame, xs, h, seg.train_end);
                    let history = observations(frame, xs, h, seg.adaptation_start);
                    let inputs = SettingInputs {
                        train: &train,
                        history: &history,
                        big_window_start,
                        break_at: cfg.break_at,
                        grid,
                    };
                    make_setting(kind, inputs).map_err(|e| e.context(format!("hour {h}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Adapter::Kalman(filters))
        }
    }
}

fn day_rows(frame: &FeatureFrame, day: NaiveDate) -> std::ops::Range<usize> {
    let first = frame.index_of(day.and_hms_opt(0, 0, 0).unwrap());
    match first {
        Some(i) => i..(i + 24).min(frame.len()),
        None => 0..0,
    }
}

/// Runs the daily loop over the whole dataset.
///
/// Offline fits, weather corrections and variance settings use data before
/// the training and adaptation boundaries only. Each day `d` then reveals the
/// loads up to 8AM of `d−1`, updates every state with them, and forecasts
/// the 24 hours of `d`.
pub fn simulate(cfg: &PipelineConfig, ds: &HourlyDataset) -> Result<Backtest> {
    cfg.validate()?;
    let specs: Vec<ExpertSpec> = cfg.experts();
    let seg = &cfg.segmentation;
    if let Some(b) = cfg.break_at {
        let (Some(a), Some(z)) = (ds.start(), ds.end()) else {
            return Err(Error::DatasetTooShort {
                hours: 0,
                required: 1,
            });
        };
        if specs
            .iter()
            .any(|s| s.setting.kalman().is_some_and(|k| k.needs_break()))
            && (b < a || b > z)
        {
            return Err(Error::Config(format!(
                "break time {b} outside the data span"
            )));
        }
    }
    let families: Vec<Family> = specs.iter().map(|s| s.family).collect();
    let Prepared { frame, models } = prepare(cfg, ds, &families)?;
    let n = frame.len();

    let feature_maps: Vec<Vec<Option<DVector<f64>>>> = models
        .iter()
        .map(|(_, m)| (0..n).map(|t| m.feature_map(&frame, t).ok()).collect())
        .collect();
    let model_index = |f: Family| models.iter().position(|(g, _)| *g == f).unwrap();

    // one stream per (family, setting)
    let mut streams: Vec<Stream> = Vec::new();
    let mut members: Vec<Member> = Vec::new();
    for spec in &specs {
        let pos = streams
            .iter()
            .position(|s| s.family == spec.family && s.setting == spec.setting);
        let stream = match pos {
            Some(p) => p,
            None => {
                let k = model_index(spec.family);
                let adapter =
                    build_adapter(cfg, spec.setting, &models[k].1, &frame, &feature_maps[k])
                        .map_err(|e| {
                            e.context(format!(
                                "setting up {}_{}",
                                spec.family.name(),
                                spec.setting.name()
                            ))
                        })?;
                streams.push(Stream {
                    family: spec.family,
                    setting: spec.setting,
                    adapter,
                    preds: vec![None; n],
                    residuals: ResidualSeries::new(frame.start(), vec![None; n]),
                    intraday: None,
                });
                streams.len() - 1
            }
        };
        if spec.intraday && streams[stream].intraday.is_none() {
            streams[stream].intraday = Some(RollingIntraday::new(cfg.intraday.min_rows));
        }
        members.push(Member {
            stream,
            intraday: spec.intraday,
            quantile: spec.quantile,
        });
    }

    let names: Vec<String> = specs.iter().map(ExpertSpec::name).collect();
    let aggregated: Vec<usize> = if !cfg.aggregation.enabled || specs.is_empty() {
        vec![]
    } else {
        match &cfg.aggregation.experts {
            Some(list) => list
                .iter()
                .map(|n| names.iter().position(|m| m == n).unwrap())
                .collect(),
            None => (0..specs.len()).collect(),
        }
    };
    let mut agg = AggregationState::new(aggregated.iter().map(|&k| names[k].clone()).collect());
    let mut forecasts: Vec<Vec<Option<f64>>> = vec![vec![None; n]; specs.len()];
    let mut aggregate: Vec<Option<f64>> = vec![None; n];
    let mut weights: Vec<WeightRecord> = Vec::new();
    let iters = cfg.viking.iters;

    let first_day = frame.start().date() + Duration::days(2);
    let last_day = frame.row(n - 1).timestamp.date();
    let mut revealed = 0usize;
    let mut days = 0usize;
    let mut day = first_day;
    let mut fvals = vec![0.0; aggregated.len()];
    while day <= last_day {
        // loads up to 8AM of the previous day become known
        let cutoff = forecast_cutoff(day);
        let upto = frame.index_of(cutoff).map_or(n, |i| i + 1);
        for t in revealed..upto {
            let row = frame.row(t);
            let h = row.hour as usize;
            for s in streams.iter_mut() {
                let k = model_index(s.family);
                if let Some(y) = row.load {
                    if let Some((mean, _)) = s.preds[t] {
                        s.residuals.values[t] = Some(y - mean);
                    }
                }
                if let (Some(x), Some(y)) = (&feature_maps[k][t], target(&frame, t)) {
                    s.update(row.timestamp, h, x, y, iters).map_err(|e| {
                        e.context(format!("updating {} at {}", s.label(), row.timestamp))
                    })?;
                }
            }
            if row.timestamp >= seg.aggregation_start && !aggregated.is_empty() {
                if let (Some(y), Some(f)) = (
                    target(&frame, t),
                    gather(&forecasts, &aggregated, t, &mut fvals),
                ) {
                    agg.update(row.hour, f, y)
                        .map_err(|e| e.context(format!("aggregating at {}", row.timestamp)))?;
                }
            }
        }
        revealed = revealed.max(upto);
        for s in streams.iter_mut() {
            if let Some(ri) = &mut s.intraday {
                ri.advance(&s.residuals, revealed);
            }
        }

        for t in day_rows(&frame, day) {
            let row = frame.row(t);
            let h = row.hour as usize;
            for s in streams.iter_mut() {
                let k = model_index(s.family);
                if let Some(x) = &feature_maps[k][t] {
                    let p = s.predict(row.timestamp, h, x).map_err(|e| {
                        e.context(format!("forecasting {} at {}", s.label(), row.timestamp))
                    })?;
                    s.preds[t] = Some(p);
                }
            }
            for (m, member) in members.iter().enumerate() {
                let s = &streams[member.stream];
                let Some((mean, var)) = s.preds[t] else {
                    continue;
                };
                let mut v = match member.quantile {
                    Some(q) => gaussian_quantile(mean, var, q)?,
                    None => mean,
                };
                if member.intraday {
                    let ri = s.intraday.as_ref().expect("intraday state");
                    // before enough residuals exist the forecast stays uncorrected
                    if let Ok(c) = ri.correct(0.0, &s.residuals, t) {
                        v += c;
                    }
                }
                if !v.is_finite() {
                    return Err(Error::NonFiniteForecast
                        .context(format!("{} at {}", names[m], row.timestamp)));
                }
                forecasts[m][t] = Some(v);
            }
            if let Some(f) = gather(&forecasts, &aggregated, t, &mut fvals) {
                aggregate[t] = Some(agg.predict(row.hour, f)?);
                if seg.test.contains(row.timestamp) {
                    for (name, &w) in agg.experts.iter().zip(agg.weights(row.hour)) {
                        weights.push(WeightRecord {
                            timestamp: row.timestamp,
                            hour: row.hour,
                            expert: name.clone(),
                            weight: w,
                        });
                    }
                }
            }
        }
        days += 1;
        day += Duration::days(1);
    }

    Ok(Backtest {
        timestamps: frame.rows().iter().map(|r| r.timestamp).collect(),
        actuals: (0..n).map(|t| target(&frame, t)).collect(),
        names,
        forecasts,
        aggregated: aggregated.iter().map(|&k| specs[k].name()).collect(),
        aggregate,
        weights,
        days,
    })
}

fn gather<'a>(
    forecasts: &[Vec<Option<f64>>],
    which: &[usize],
    t: usize,
    buf: &'a mut [f64],
) -> Option<&'a [f64]> {
    if which.is_empty() {
        return None;
    }
    for (j, &k) in which.iter().enumerate() {
        buf[j] = forecasts[k][t]?;
    }
    Some(buf)
}
