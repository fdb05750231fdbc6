//! Two-hidden-layer tanh perceptron, one per hour.

use chrono::NaiveDateTime;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::training_rows;
use crate::data::{FeatureFrame, FeatureRow};
use crate::error::{Error, Result};

/// trend, Toy, 7 day indicators, Temps95, LoadD, LoadW
pub const MLP_INPUTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: [15, 10],
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
        }
    }
}

fn inputs(r: &FeatureRow) -> Option<[f64; MLP_INPUTS]> {
    let mut x = [0.0; MLP_INPUTS];
    x[0] = r.trend;
    x[1] = r.toy;
    x[2 + r.day_of_week as usize] = 1.0;
    x[9] = r.temps95;
    x[10] = r.load_d?;
    x[11] = r.load_w?;
    Some(x)
}

/// Network weights; matrices are row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: [usize; 4],
    pub params: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Mlp {
    fn offsets(&self) -> Offsets {
        let [i, h1, h2, o] = self.sizes;
        let w1 = 0;
        let b1 = w1 + h1 * i;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + o * h2;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + o,
        }
    }

    /// Glorot-uniform hidden layers, zero output layer.
    pub fn init(inputs: usize, hidden: [usize; 2], rng: &mut impl Rng) -> Self {
        let mut m = Self {
            sizes: [inputs, hidden[0], hidden[1], 1],
            params: vec![],
        };
        let o = m.offsets();
        m.params = vec![0.0; o.len];
        let mut fill = |from: usize, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut m.params[from..from + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
        };
        fill(o.w1, inputs, hidden[0]);
        fill(o.w2, hidden[0], hidden[1]);
        m
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn dense(params: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &params[k * n..(k + 1) * n];
            *o = bias[k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Activations of both hidden layers and the output.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let [_, h1, h2, _] = self.sizes;
        let o = self.offsets();
        let p = &self.params;
        let mut a1 = vec![0.0; h1];
        Self::dense(&p[o.w1..o.b1], &p[o.b1..o.w2], x, &mut a1);
        a1.iter_mut().for_each(|v| *v = v.tanh());
        let mut a2 = vec![0.0; h2];
        Self::dense(&p[o.w2..o.b2], &p[o.b2..o.w3], &a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.tanh());
        let out = p[o.b3]
            + p[o.w3..o.b3]
                .iter()
                .zip(&a2)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        (a1, a2, out)
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.forward(x).2
    }

    /// Last hidden layer.
    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).1
    }

    /// Mean squared error over `(x, y)` pairs and its gradient.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
        let [_, h1, h2, _] = self.sizes;
        let o = self.offsets();
        let p = &self.params;
        let mut grad = vec![0.0; o.len];
        let mut loss = 0.0;
        let scale = 1.0 / xs.len() as f64;
        let mut d2 = vec![0.0; h2];
        let mut d1 = vec![0.0; h1];
        for (x, &y) in xs.iter().zip(ys) {
            let (a1, a2, out) = self.forward(x);
            let e = out - y;
            loss += e * e * scale;
            let g = 2.0 * e * scale;
            grad[o.b3] += g;
            for k in 0..h2 {
                grad[o.w3 + k] += g * a2[k];
                d2[k] = g * p[o.w3 + k] * (1.0 - a2[k] * a2[k]);
            }
            d1.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..h2 {
                grad[o.b2 + k] += d2[k];
                let row = o.w2 + k * h1;
                for j in 0..h1 {
                    grad[row + j] += d2[k] * a1[j];
                    d1[j] += d2[k] * p[row + j];
                }
            }
            for j in 0..h1 {
                let dj = d1[j] * (1.0 - a1[j] * a1[j]);
                grad[o.b1 + j] += dj;
                let row = o.w1 + j * x.len();
                for (i, xi) in x.iter().enumerate() {
                    grad[row + i] += dj * xi;
                }
            }
        }
        (loss, grad)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHour {
    pub net: Mlp,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    /// Training loss after each epoch, on the standardised target.
    pub loss_curve: Vec<f64>,
}

impl MlpHour {
    fn standardize(&self, x: &[f64; MLP_INPUTS]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn predict(&self, r: &FeatureRow) -> Option<f64> {
        let x = self.standardize(&inputs(r)?);
        Some(self.target_mean + self.target_std * self.net.output(&x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub hours: Vec<MlpHour>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

impl MlpModel {
    pub fn fit(frame: &FeatureFrame, train_end: NaiveDateTime, cfg: &MlpConfig) -> Result<Self> {
        if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
            return Err(Error::InvalidHyperparameter(
                "MLP batch size and learning rate must be positive".into(),
            ));
        }
        let hours = (0..24u32)
            .map(|h| {
                fit_hour(frame, train_end, h, cfg).map_err(|e| e.context(format!("MLP hour {h}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { hours })
    }

    pub fn feature_dim(&self) -> usize {
        self.hours[0].net.sizes[2] + 1
    }

    /// `[last hidden layer…, 1]`
    pub fn feature_map(&self, r: &FeatureRow) -> Option<Vec<f64>> {
        let h = &self.hours[r.hour as usize];
        let mut x = h.net.hidden(&h.standardize(&inputs(r)?));
        x.push(1.0);
        Some(x)
    }

    pub fn offline_state(&self, hour: usize) -> DVector<f64> {
        let h = &self.hours[hour];
        let o = h.net.offsets();
        let mut theta: Vec<f64> = h.net.params[o.w3..o.b3]
            .iter()
            .map(|w| w * h.target_std)
            .collect();
        theta.push(h.target_mean + h.target_std * h.net.params[o.b3]);
        DVector::from_vec(theta)
    }
}

fn fit_hour(
    frame: &FeatureFrame,
    train_end: NaiveDateTime,
    hour: u32,
    cfg: &MlpConfig,
) -> Result<MlpHour> {
    let rows: Vec<([f64; MLP_INPUTS], f64)> = training_rows(frame, train_end, hour)
        .into_iter()
        .filter_map(|i| Some((inputs(frame.row(i))?, frame.row(i).load?)))
        .collect();
    if rows.len() < 2 * MLP_INPUTS {
        return Err(Error::InsufficientHistory(format!(
            "{} training rows",
            rows.len()
        )));
    }
    let (input_mean, input_std): (Vec<f64>, Vec<f64>) = (0..MLP_INPUTS)
        .map(|j| mean_std(rows.iter().map(move |(x, _)| x[j])))
        .unzip();
    let (target_mean, target_std) = mean_std(rows.iter().map(|(_, y)| *y));
    let mut hour_model = MlpHour {
        net: Mlp {
            sizes: [0; 4],
            params: vec![],
        },
        input_mean,
        input_std,
        target_mean,
        target_std,
        loss_curve: Vec::with_capacity(cfg.epochs),
    };
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|(x, _)| hour_model.standardize(x))
        .collect();
    let ys: Vec<f64> = rows
        .iter()
        .map(|(_, y)| (y - target_mean) / target_std)
        .collect();
    let all: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(hour as u64));
    let mut net = Mlp::init(MLP_INPUTS, cfg.hidden, &mut rng);
    let mut adam = Adam::new(net.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
            let (_, grad) = net.loss_and_grad(&bx, &by);
            adam.step(&mut net.params, &grad);
        }
        let loss = (0..all.len())
            .map(|i| (net.output(all[i]) - ys[i]).powi(2))
            .sum::<f64>()
            / all.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        hour_model.loss_curve.push(loss);
    }
    hour_model.net = net;
    Ok(hour_model)
}
