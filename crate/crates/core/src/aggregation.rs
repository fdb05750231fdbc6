//! Online convex aggregation of experts with ML-Poly, one state per hour,
//! and greedy selection of the expert set.
//!
//! ML-Poly linearises the absolute loss at the aggregated forecast: with
//! `g = sign(ŷ − y)` the instantaneous regret of expert `i` is
//! `r_i = g·(ŷ − f_i)`. Weights are proportional to
//! `η_i · max(R_i, 0)` where `R_i` is the cumulative regret and
//! `η_i = 1 / (1 + Σ r_i²)`.

use std::io::Write;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ML-Poly state for a single hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlPoly {
    pub regret: Vec<f64>,
    pub sq_regret: Vec<f64>,
    pub weights: Vec<f64>,
    pub steps: usize,
}

impl MlPoly {
    pub fn new(k: usize) -> Self {
        Self {
            regret: vec![0.0; k],
            sq_regret: vec![0.0; k],
            weights: vec![1.0 / k as f64; k],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check(&self, forecasts: &[f64]) -> Result<()> {
        if forecasts.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: forecasts.len(),
            });
        }
        if self.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if !forecasts.iter().all(|f| f.is_finite()) {
            return Err(Error::NonFiniteForecast);
        }
        Ok(())
    }

    /// `Σ w_i f_i` with the current weights.
    pub fn predict(&self, forecasts: &[f64]) -> Result<f64> {
        self.check(forecasts)?;
        Ok(self.weights.iter().zip(forecasts).map(|(w, f)| w * f).sum())
    }

    /// Updates with the outcome `y`; returns the forecast that was scored.
    pub fn update(&mut self, forecasts: &[f64], y: f64) -> Result<f64> {
        let pred = self.predict(forecasts)?;
        if !y.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        self.steps += 1;
        let g = if pred > y {
            1.0
        } else if pred < y {
            -1.0
        } else {
            return Ok(pred);
        };
        for (i, f) in forecasts.iter().enumerate() {
            let r = g * (pred - f);
            self.regret[i] += r;
            self.sq_regret[i] += r * r;
        }
        let raw: Vec<f64> = self
            .regret
            .iter()
            .zip(&self.sq_regret)
            .map(|(r, s)| r.max(0.0) / (1.0 + s))
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            self.weights = raw.iter().map(|w| w / total).collect();
        } else {
            let k = self.len() as f64;
            self.weights.iter_mut().for_each(|w| *w = 1.0 / k);
        }
        Ok(pred)
    }
}

/// One ML-Poly state per hour of the day over a fixed expert list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationState {
    pub experts: Vec<String>,
    pub hours: Vec<MlPoly>,
}

impl AggregationState {
    pub fn new(experts: Vec<String>) -> Self {
        let k = experts.len();
        Self {
            experts,
            hours: (0..24).map(|_| MlPoly::new(k)).collect(),
        }
    }

    pub fn predict(&self, hour: u32, forecasts: &[f64]) -> Result<f64> {
        self.hours[hour as usize].predict(forecasts)
    }

    pub fn update(&mut self, hour: u32, forecasts: &[f64], y: f64) -> Result<f64> {
        self.hours[hour as usize].update(forecasts, y)
    }

    pub fn weights(&self, hour: u32) -> &[f64] {
        &self.hours[hour as usize].weights
    }
}

/// One row of a long-format weight trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub timestamp: NaiveDateTime,
    pub hour: u32,
    pub expert: String,
    pub weight: f64,
}

/// Writes `timestamp,hour,expert,weight` rows.
pub fn write_weights_csv<W: Write>(records: &[WeightRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "hour", "expert", "weight"])?;
    for r in records {
        w.write_record([
            r.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            r.hour.to_string(),
            r.expert.clone(),
            r.weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Forecasts of the candidate experts and the outcomes, aligned in time.
#[derive(Debug, Clone, Copy)]
pub struct SelectionData<'a> {
    /// `forecasts[k][t]` for candidate `k`.
    pub forecasts: &'a [Vec<f64>],
    pub targets: &'a [f64],
    pub hours: &'a [u32],
    /// Rows from this index on are scored; earlier rows only warm up the weights.
    pub score_from: usize,
}

/// Mean absolute error of the per-hour ML-Poly aggregation of `subset`.
pub fn aggregation_mae(data: SelectionData<'_>, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let n = data.targets.len();
    if data.score_from >= n {
        return Err(Error::EmptyWindow);
    }
    let mut states: Vec<MlPoly> = (0..24).map(|_| MlPoly::new(subset.len())).collect();
    let mut f = vec![0.0; subset.len()];
    let mut total = 0.0;
    for t in 0..n {
        for (j, &k) in subset.iter().enumerate() {
            f[j] = data.forecasts[k][t];
        }
        let pred = states[data.hours[t] as usize].update(&f, data.targets[t])?;
        if t >= data.score_from {
            total += (pred - data.targets[t]).abs();
        }
    }
    Ok(total / (n - data.score_from) as f64)
}

/// Greedy forward selection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Candidate indices in the order they were added.
    pub order: Vec<usize>,
    /// Validation MAE after each addition.
    pub curve: Vec<f64>,
}

/// Starting from the empty set, repeatedly adds the candidate whose
/// inclusion gives the lowest aggregated MAE. Stops at `max_size` or when
/// no addition strictly improves.
pub fn greedy_select(data: SelectionData<'_>, max_size: usize) -> Result<Selection> {
    let k = data.forecasts.len();
    if k == 0 {
        return Err(Error::EmptyCandidates);
    }
    for f in data.forecasts {
        if f.len() != data.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: data.targets.len(),
                found: f.len(),
            });
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut curve: Vec<f64> = Vec::new();
    while order.len() < max_size.min(k) {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..k).filter(|c| !order.contains(c)) {
            let mut trial = order.clone();
            trial.push(c);
            let mae = aggregation_mae(data, &trial)?;
            if best.is_none_or(|(_, b)| mae < b) {
                best = Some((c, mae));
            }
        }
        match best {
            Some((c, mae)) if curve.last().is_none_or(|&prev| mae < prev) => {
                order.push(c);
                curve.push(mae);
            }
            _ => break,
        }
    }
    Ok(Selection { order, curve })
}
