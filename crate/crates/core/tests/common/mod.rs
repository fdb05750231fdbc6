//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use chrono::{NaiveDate, NaiveDateTime};
use loadcast::data::{ScenarioConfig, Segmentation, Window};
use loadcast::experts::Family;
use loadcast::pipeline::{DataSource, PipelineConfig, RosterEntry, Setting};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn ts(y: i32, m: u32, d: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(y, m, d)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| normal(rng))
}

/// Random symmetric PSD matrix, possibly rank deficient.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let rank = rng.random_range(0..=d);
    let a = DMatrix::from_fn(d, rank, |_, _| normal(rng));
    &a * a.transpose() * scale
}

/// Posterior of a random-walk regression computed by conditioning the joint
/// Gaussian of all states and observations at once.
///
/// `θ_t = θ_{t−1} + w_t`, `w_t ~ N(0, Q_t)`, `θ_0 ~ N(m0, P0)`,
/// `y_t = θ_tᵀ x_t + ε_t`, `ε_t ~ N(0, σ²)`.
pub struct JointGaussian {
    /// One-step predictive mean and variance of each `y_t`.
    pub predictive: Vec<(f64, f64)>,
    pub final_mean: DVector<f64>,
    pub final_cov: DMatrix<f64>,
}

pub fn joint_gaussian_posterior(
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    qs: &[DMatrix<f64>],
    sigma2: f64,
    xs: &[DVector<f64>],
    ys: &[f64],
) -> JointGaussian {
    let n = ys.len();
    // Cov(θ_s, θ_t) = P0 + Σ_{r ≤ min(s,t)} Q_r
    let mut cum = vec![p0.clone()];
    for q in qs {
        let next = cum.last().unwrap() + q;
        cum.push(next);
    }
    let state_cov = |s: usize, t: usize| &cum[s.min(t) + 1];
    let cyy = DMatrix::from_fn(n, n, |s, t| {
        xs[s].dot(&(state_cov(s, t) * &xs[t])) + if s == t { sigma2 } else { 0.0 }
    });
    let mu: Vec<f64> = xs.iter().map(|x| x.dot(m0)).collect();

    let mut predictive = Vec::with_capacity(n);
    for t in 0..n {
        if t == 0 {
            predictive.push((mu[0], cyy[(0, 0)]));
            continue;
        }
        let c = cyy.view((0, 0), (t, t)).into_owned();
        let b = cyy.view((0, t), (t, 1)).into_owned();
        let r = DVector::from_fn(t, |i, _| ys[i] - mu[i]);
        let lu = c.lu();
        let w = lu.solve(&b).unwrap();
        predictive.push((
            mu[t] + w.column(0).dot(&r),
            cyy[(t, t)] - b.column(0).dot(&w.column(0)),
        ));
    }

    // Cov(θ_T, y_s) = Cov(θ_T, θ_s) x_s
    let last = n - 1;
    let d = m0.len();
    let cty = DMatrix::from_fn(d, n, |i, s| (state_cov(last, s) * &xs[s])[i]);
    let r = DVector::from_fn(n, |i, _| ys[i] - mu[i]);
    let lu = cyy.lu();
    let final_mean = m0 + &cty * lu.solve(&r).unwrap();
    let final_cov = &cum[n] - &cty * lu.solve(&cty.transpose()).unwrap();
    JointGaussian {
        predictive,
        final_mean,
        final_cov,
    }
}

/// ML-Poly recomputed from the full history at every step.
pub struct ScalarMlPoly {
    history: Vec<(Vec<f64>, f64, f64)>,
    k: usize,
}

impl ScalarMlPoly {
    pub fn new(k: usize) -> Self {
        Self {
            history: Vec::new(),
            k,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut raw = vec![0.0; self.k];
        for i in 0..self.k {
            let mut regret = 0.0;
            let mut squares = 0.0;
            for (f, y, pred) in &self.history {
                let g = if pred > y {
                    1.0
                } else if pred < y {
                    -1.0
                } else {
                    0.0
                };
                let r = g * (pred - f[i]);
                regret += r;
                squares += r * r;
            }
            raw[i] = if regret > 0.0 {
                regret / (1.0 + squares)
            } else {
                0.0
            };
        }
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / self.k as f64; self.k]
        }
    }

    pub fn predict(&self, f: &[f64]) -> f64 {
        self.weights().iter().zip(f).map(|(w, x)| w * x).sum()
    }

    pub fn update(&mut self, f: &[f64], y: f64) {
        let pred = self.predict(f);
        self.history.push((f.to_vec(), y, pred));
    }
}

/// Three synthetic years with all coefficients scaled by 0.8 from mid-2018.
pub fn regime_break_scenario() -> ScenarioConfig {
    ScenarioConfig {
        start: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
        days: 3 * 365,
        break_at: Some(ts(2018, 7, 2)),
        break_scale: Some(0.8),
        ..ScenarioConfig::default()
    }
}

pub fn segmentation() -> Segmentation {
    Segmentation {
        train_end: ts(2018, 7, 2),
        adaptation_start: ts(2018, 7, 2),
        aggregation_start: ts(2019, 1, 1),
        validation: Window::new(ts(2019, 1, 1), ts(2019, 3, 1)),
        test: Window::new(ts(2019, 3, 1), ts(2020, 1, 1)),
    }
}

pub fn roster(families: &[Family], settings: &[Setting]) -> Vec<RosterEntry> {
    vec![RosterEntry {
        families: families.to_vec(),
        settings: settings.to_vec(),
        intraday: vec![false],
        quantiles: vec![],
    }]
}

pub fn config(
    scenario: ScenarioConfig,
    seg: Segmentation,
    roster: Vec<RosterEntry>,
) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_json(
        r#"{"data": {"csv": {"path": "unused.csv"}},
            "segmentation": {"train_end": "2018-07-02T00:00:00", "adaptation_start": "2018-07-02T00:00:00",
              "aggregation_start": "2019-01-01T00:00:00",
              "validation": {"start": "2019-01-01T00:00:00", "end": "2019-03-01T00:00:00"},
              "test": {"start": "2019-03-01T00:00:00", "end": "2020-01-01T00:00:00"}}}"#,
    )
    .unwrap();
    cfg.data = DataSource::Synthetic(scenario);
    cfg.segmentation = seg;
    cfg.roster = roster;
    cfg
}
