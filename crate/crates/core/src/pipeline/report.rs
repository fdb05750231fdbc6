use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::aggregation::{write_weights_csv, WeightRecord};
use crate::data::Window;
use crate::error::{Error, Result};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub seconds: f64,
    /// Backtest days simulated.
    pub days: usize,
    pub experts: usize,
}

/// Hourly forecasts over the test window.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub window: Window,
    pub timestamps: Vec<NaiveDateTime>,
    pub actuals: Vec<Option<f64>>,
    /// Expert name and its forecasts, aligned with `timestamps`.
    pub experts: Vec<(String, Vec<Option<f64>>)>,
    pub aggregate: Option<Vec<Option<f64>>>,
    pub weights: Vec<WeightRecord>,
    pub runtime: RuntimeStats,
}

/// Mean absolute error per expert; the aggregation is listed separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub window: Window,
    /// Hours with an observed load in the window.
    pub hours: usize,
    pub experts: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<f64>,
}

/// Mean of `|f − y|` over hours where both exist.
pub fn mae(forecasts: &[Option<f64>], actuals: &[Option<f64>]) -> Option<f64> {
    let (sum, n) = forecasts
        .iter()
        .zip(actuals)
        .filter_map(|(f, y)| Some((f.as_ref()? - y.as_ref()?).abs()))
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// MAE of every expert and of the aggregation over `window`.
pub fn evaluate(report: &BacktestReport, window: &Window) -> Result<Metrics> {
    let idx: Vec<usize> = (0..report.timestamps.len())
        .filter(|&t| window.contains(report.timestamps[t]) && report.actuals[t].is_some())
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let pick = |v: &[Option<f64>]| idx.iter().map(|&t| v[t]).collect::<Vec<_>>();
    let actuals = pick(&report.actuals);
    let experts = report
        .experts
        .iter()
        .filter_map(|(name, f)| Some((name.clone(), mae(&pick(f), &actuals)?)))
        .collect();
    let aggregation = report
        .aggregate
        .as_ref()
        .and_then(|a| mae(&pick(a), &actuals));
    Ok(Metrics {
        window: *window,
        hours: idx.len(),
        experts,
        aggregation,
    })
}

fn ts(t: NaiveDateTime) -> String {
    t.format(TS_FORMAT).to_string()
}

fn write_series(path: &Path, timestamps: &[NaiveDateTime], values: &[Option<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "value"])?;
    for (t, v) in timestamps.iter().zip(values) {
        if let Some(v) = v {
            w.write_record([ts(*t), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `forecasts.csv`, `actuals.csv`, `aggregation.csv`, `weights.csv`,
/// `metrics.json`, `runtime.json` and `config.lock.json` into `dir`.
pub fn emit_report(report: &BacktestReport, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("forecasts.csv"))?;
    w.write_record(["timestamp", "expert", "value"])?;
    for (i, t) in report.timestamps.iter().enumerate() {
        for (name, f) in &report.experts {
            if let Some(v) = f[i] {
                w.write_record([ts(*t), name.clone(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    write_series(
        &dir.join("actuals.csv"),
        &report.timestamps,
        &report.actuals,
    )?;
    if let Some(a) = &report.aggregate {
        write_series(&dir.join("aggregation.csv"), &report.timestamps, a)?;
    }
    write_weights_csv(
        &report.weights,
        BufWriter::new(File::create(dir.join("weights.csv"))?),
    )?;

    let metrics = match evaluate(report, &report.window) {
        Ok(m) => m,
        Err(Error::EmptyWindow) => Metrics {
            window: report.window,
            hours: 0,
            experts: BTreeMap::new(),
            aggregation: None,
        },
        Err(e) => return Err(e),
    };
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)? + "\n",
    )?;
    std::fs::write(
        dir.join("runtime.json"),
        serde_json::to_string_pretty(&report.runtime)? + "\n",
    )?;
    std::fs::write(dir.join("config.lock.json"), cfg.to_json()? + "\n")?;
    Ok(())
}

fn parse_ts(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TS_FORMAT).map_err(|_| Error::InvalidTimestamp(s.to_string()))
}

fn read_series(path: &Path) -> Result<Vec<(NaiveDateTime, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let t = parse_ts(&rec[0])?;
            let value = rec[1].parse::<f64>().map_err(|_| Error::InvalidValue {
                column: "value".into(),
                timestamp: t,
                value: rec[1].into(),
            })?;
            Ok((t, value))
        })
        .collect()
}

/// Reads a report directory written by [`emit_report`]. Weights are not loaded.
pub fn load_report(dir: &Path) -> Result<BacktestReport> {
    let metrics: Metrics =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json"))?)?;
    let actual_rows = read_series(&dir.join("actuals.csv"))?;
    let mut rows: Vec<(NaiveDateTime, String, f64)> = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("forecasts.csv"))?;
    for rec in r.records() {
        let rec = rec?;
        let t = parse_ts(&rec[0])?;
        let v = rec[2].parse::<f64>().map_err(|_| Error::InvalidValue {
            column: "value".into(),
            timestamp: t,
            value: rec[2].into(),
        })?;
        rows.push((t, rec[1].to_string(), v));
    }
    let mut timestamps: Vec<NaiveDateTime> = actual_rows
        .iter()
        .map(|r| r.0)
        .chain(rows.iter().map(|r| r.0))
        .collect();
    timestamps.sort();
    timestamps.dedup();
    let pos = |t: NaiveDateTime| timestamps.binary_search(&t).unwrap();

    let mut actuals = vec![None; timestamps.len()];
    for (t, v) in actual_rows {
        actuals[pos(t)] = Some(v);
    }
    let mut experts: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for (t, name, v) in rows {
        let k = match experts.iter().position(|(n, _)| *n == name) {
            Some(k) => k,
            None => {
                experts.push((name, vec![None; timestamps.len()]));
                experts.len() - 1
            }
        };
        experts[k].1[pos(t)] = Some(v);
    }
    let agg_path = dir.join("aggregation.csv");
    let aggregate = if agg_path.exists() {
        let mut a = vec![None; timestamps.len()];
        for (t, v) in read_series(&agg_path)? {
            if let Ok(i) = timestamps.binary_search(&t) {
                a[i] = Some(v);
            }
        }
        Some(a)
    } else {
        None
    };
    Ok(BacktestReport {
        window: metrics.window,
        timestamps,
        actuals,
        experts,
        aggregate,
        weights: Vec::new(),
        runtime: RuntimeStats::default(),
    })
}
