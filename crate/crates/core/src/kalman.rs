//! Linear Gaussian state-space adaptation.
//!
//! The coefficients of an expert follow a random walk and the load is a
//! noisy linear observation of them:
//!
//! ```text
//! θ_t − θ_{t−1} ~ N(0, Q_t)
//! y_t − θ_tᵀ x_t ~ N(0, σ²)
//! ```
//!
//! [`KalmanState::step`] is the exact filter recursion. The five variance
//! settings ([`AdaptationKind`]) decide `θ̂₁`, `P₁`, `σ²` and the `Q_t`
//! schedule; the dynamic ones are tuned by [`greedy_q_search`] on the
//! profile likelihood from [`closed_form_init`].

use chrono::NaiveDateTime;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, symmetrize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian belief over the state plus the observation variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub sigma2: f64,
}

/// One-step-ahead Gaussian forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn log_likelihood(&self, y: f64) -> f64 {
        let e = y - self.mean;
        -0.5 * (LN_2PI + self.variance.ln() + e * e / self.variance)
    }

    pub fn quantile(&self, level: f64) -> Result<f64> {
        gaussian_quantile(self.mean, self.variance, level)
    }
}

impl KalmanState {
    pub fn new(theta: DVector<f64>, p: DMatrix<f64>, sigma2: f64) -> Self {
        Self { theta, p, sigma2 }
    }

    /// `θ̂ = 0`, `P = I`, `σ² = 1`.
    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim), 1.0)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn check(&self, x: &DVector<f64>, q: &DMatrix<f64>) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: q.nrows(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    /// Forecast after a transition with process noise `q`:
    /// mean `θ̂ᵀx`, variance `σ² + xᵀ(P+Q)x`.
    pub fn predict(&self, x: &DVector<f64>, q: &DMatrix<f64>) -> Result<Prediction> {
        self.check(x, q)?;
        let p_pred = &self.p + q;
        Ok(Prediction {
            mean: self.theta.dot(x),
            variance: self.sigma2 + (x.transpose() * &p_pred * x)[(0, 0)],
        })
    }

    /// Transition with `q`, then measurement update with `(x, y)`.
    /// Returns the forecast made before seeing `y`.
    pub fn step(&mut self, x: &DVector<f64>, y: f64, q: &DMatrix<f64>) -> Result<Prediction> {
        self.check(x, q)?;
        if !y.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        let d = self.dim();
        let p_pred = &self.p + q;
        let s = &p_pred * x;
        let variance = self.sigma2 + x.dot(&s);
        if !(variance > 0.0) {
            return Err(Error::NonFiniteInput);
        }
        let mean = self.theta.dot(x);
        let gain = &s / variance;
        self.theta += &gain * (y - mean);
        // Joseph form
        let a = DMatrix::identity(d, d) - &gain * x.transpose();
        self.p = &a * &p_pred * a.transpose() + &gain * gain.transpose() * self.sigma2;
        symmetrize(&mut self.p);
        Ok(Prediction { mean, variance })
    }

    /// Multiplies the covariance and observation variance by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.theta.clone(), &self.p * c, self.sigma2 * c)
    }
}

/// Gaussian quantile `mean + Φ⁻¹(level)·√variance`.
pub fn gaussian_quantile(mean: f64, variance: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    if !(variance > 0.0) {
        return Err(Error::NonFiniteInput);
    }
    let z = Normal::standard().inverse_cdf(level);
    Ok(mean + z * variance.sqrt())
}

/// Quantile of the predictive distribution of `state` at `x`, with the
/// state's own covariance (no extra transition).
pub fn forecast_quantile(
    state: &KalmanState,
    x: &DVector<f64>,
    sigma2: f64,
    level: f64,
) -> Result<f64> {
    if x.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: x.len(),
        });
    }
    let variance = sigma2 + (x.transpose() * &state.p * x)[(0, 0)];
    gaussian_quantile(state.theta.dot(x), variance, level)
}

/// Process-noise schedule: a constant base with an optional one-off
/// replacement at a break time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSchedule {
    pub base: DMatrix<f64>,
    pub jump: Option<(NaiveDateTime, DMatrix<f64>)>,
}

impl QSchedule {
    pub fn zero(dim: usize) -> Self {
        Self {
            base: DMatrix::zeros(dim, dim),
            jump: None,
        }
    }

    pub fn constant(q: DMatrix<f64>) -> Self {
        Self {
            base: q,
            jump: None,
        }
    }

    pub fn with_jump(mut self, at: NaiveDateTime, q: DMatrix<f64>) -> Self {
        self.jump = Some((at, q));
        self
    }

    /// Covariance of the transition into `t` from the previous step `prev`.
    /// The jump fires on the first step reaching the break time.
    pub fn at(&self, prev: Option<NaiveDateTime>, t: NaiveDateTime) -> &DMatrix<f64> {
        match &self.jump {
            Some((at, q)) if t >= *at && prev.is_none_or(|p| p < *at) => q,
            _ => &self.base,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            base: &self.base * c,
            jump: self.jump.as_ref().map(|(t, q)| (*t, q * c)),
        }
    }
}

/// The variance settings of the state-space adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationKind {
    Static,
    StaticBreak,
    Dynamic,
    DynamicBreak,
    DynamicBig,
}

impl AdaptationKind {
    pub const ALL: [AdaptationKind; 5] = [
        AdaptationKind::Static,
        AdaptationKind::StaticBreak,
        AdaptationKind::Dynamic,
        AdaptationKind::DynamicBreak,
        AdaptationKind::DynamicBig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdaptationKind::Static => "static",
            AdaptationKind::StaticBreak => "staticbreak",
            AdaptationKind::Dynamic => "dynamic",
            AdaptationKind::DynamicBreak => "dynamicbreak",
            AdaptationKind::DynamicBig => "dynamicbig",
        }
    }

    pub fn needs_break(self) -> bool {
        matches!(
            self,
            AdaptationKind::StaticBreak | AdaptationKind::DynamicBreak
        )
    }
}

/// Resolved variance configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSetting {
    pub kind: AdaptationKind,
    pub break_at: Option<NaiveDateTime>,
    /// Diagonal of `Q/σ²` for the dynamic settings.
    pub q_ratio: Option<Vec<f64>>,
    /// Scalar `q` of `Q = qI` for the big setting.
    pub q_scalar: Option<f64>,
}

impl VarianceSetting {
    pub fn validate(&self, span: Option<(NaiveDateTime, NaiveDateTime)>) -> Result<()> {
        if self.kind.needs_break() {
            let Some(t) = self.break_at else {
                return Err(Error::Config(format!(
                    "{} needs a break time",
                    self.kind.name()
                )));
            };
            if let Some((a, b)) = span {
                if t < a || t > b {
                    return Err(Error::Config(format!(
                        "break time {t} outside the data span"
                    )));
                }
            }
        }
        if let Some(diag) = &self.q_ratio {
            if !diag.iter().all(|&v| QGrid::default().contains(v)) {
                return Err(Error::Config(
                    "Q/σ² entries must be 0 or 2^j with -30 <= j <= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A timestamped `(x, y)` pair fed to a filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub timestamp: NaiveDateTime,
    pub x: DVector<f64>,
    pub y: f64,
}

/// Filter state together with its schedule and clock.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanFilter {
    pub state: KalmanState,
    pub schedule: QSchedule,
    pub setting: VarianceSetting,
    pub last: Option<NaiveDateTime>,
}

impl KalmanFilter {
    pub fn new(state: KalmanState, schedule: QSchedule, setting: VarianceSetting) -> Self {
        Self {
            state,
            schedule,
            setting,
            last: None,
        }
    }

    pub fn predict(&self, t: NaiveDateTime, x: &DVector<f64>) -> Result<Prediction> {
        self.state.predict(x, self.schedule.at(self.last, t))
    }

    pub fn update(&mut self, t: NaiveDateTime, x: &DVector<f64>, y: f64) -> Result<Prediction> {
        let q = self.schedule.at(self.last, t).clone();
        let out = self.state.step(x, y, &q)?;
        self.last = Some(t);
        Ok(out)
    }

    /// Sum of one-step log-likelihoods over `obs`, updating as it goes.
    pub fn run(&mut self, obs: &[Observation]) -> Result<f64> {
        let mut ll = 0.0;
        for o in obs {
            ll += self.update(o.timestamp, &o.x, o.y)?.log_likelihood(o.y);
        }
        Ok(ll)
    }

    pub fn snapshot(&self) -> KalmanSnapshot {
        KalmanSnapshot {
            theta: self.state.theta.iter().cloned().collect(),
            p: row_major(&self.state.p),
            sigma2: self.state.sigma2,
            setting: self.setting.clone(),
            last_timestamp: self.last,
        }
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
        .collect()
}

/// Serializable filter state for resuming a backtest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanSnapshot {
    pub theta: Vec<f64>,
    /// Row-major covariance.
    pub p: Vec<f64>,
    pub sigma2: f64,
    pub setting: VarianceSetting,
    pub last_timestamp: Option<NaiveDateTime>,
}

impl KalmanSnapshot {
    /// Rebuilds the filter; the schedule is re-derived from the setting.
    pub fn restore(&self) -> Result<KalmanFilter> {
        let d = self.theta.len();
        if self.p.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: self.p.len(),
            });
        }
        let state = KalmanState::new(
            DVector::from_vec(self.theta.clone()),
            DMatrix::from_row_slice(d, d, &self.p),
            self.sigma2,
        );
        let schedule = schedule_for(&self.setting, d, self.sigma2);
        Ok(KalmanFilter {
            state,
            schedule,
            setting: self.setting.clone(),
            last: self.last_timestamp,
        })
    }
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

fn schedule_for(setting: &VarianceSetting, d: usize, sigma2: f64) -> QSchedule {
    let eye = DMatrix::<f64>::identity(d, d);
    let base = match (setting.kind, &setting.q_ratio, setting.q_scalar) {
        (AdaptationKind::Dynamic | AdaptationKind::DynamicBreak, Some(r), _) => diag(r) * sigma2,
        (AdaptationKind::DynamicBig, _, Some(q)) => &eye * q,
        _ => DMatrix::zeros(d, d),
    };
    let sched = QSchedule::constant(base);
    match (setting.kind, setting.break_at) {
        (AdaptationKind::StaticBreak, Some(t)) => sched.with_jump(t, eye),
        (AdaptationKind::DynamicBreak, Some(t)) => sched.with_jump(t, eye * sigma2),
        _ => sched,
    }
}

/// Candidate values `{0} ∪ {2^j : min_exp ≤ j ≤ max_exp}` for `Q/σ²` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QGrid {
    pub min_exp: i32,
    pub max_exp: i32,
}

impl Default for QGrid {
    fn default() -> Self {
        Self {
            min_exp: -30,
            max_exp: 0,
        }
    }
}

impl QGrid {
    pub fn values(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain((self.min_exp..=self.max_exp).map(|j| 2f64.powi(j)))
            .collect()
    }

    pub fn contains(&self, v: f64) -> bool {
        self.values().contains(&v)
    }
}

/// Maximum-likelihood `θ̂₁` and `σ²` for a fixed `Q/σ²` with `P₁ = σ²I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormInit {
    pub theta1: DVector<f64>,
    pub sigma2: f64,
    pub log_likelihood: f64,
}

/// Profile likelihood machinery.
///
/// With `P₁ = σ²I` and `Q = σ²Q*` the gains and the scaled innovation
/// variances `v*_t = 1 + x_tᵀ(P*_t+Q*)x_t` do not depend on `θ̂₁` or `σ²`,
/// and each innovation is affine in `θ̂₁`: `e_t = L_t(y) − Σ_j θ̂₁_j L_t(X_j)`
/// where `L` is the unit-scale filter started from zero. Running that
/// filter on `y` and on every regressor column gives all innovations in
/// `O(n d²)`, after which `θ̂₁` is a weighted least-squares solution.
struct ProfileWorkspace {
    d: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    p: Vec<f64>,
    means: Vec<f64>,
    s: Vec<f64>,
    e: Vec<f64>,
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

impl ProfileWorkspace {
    fn new(obs: &[Observation]) -> Result<Self> {
        let d = obs
            .first()
            .map(|o| o.x.len())
            .ok_or_else(|| Error::InsufficientHistory("no observations".into()))?;
        let mut xs = Vec::with_capacity(obs.len() * d);
        for o in obs {
            if o.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: o.x.len(),
                });
            }
            if !o.y.is_finite() || !o.x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
            xs.extend(o.x.iter());
        }
        Ok(Self {
            d,
            xs,
            ys: obs.iter().map(|o| o.y).collect(),
            p: vec![0.0; d * d],
            means: vec![0.0; d * (d + 1)],
            s: vec![0.0; d],
            e: vec![0.0; d + 1],
            gram: vec![0.0; (d + 1) * (d + 1)],
            rhs: vec![0.0; d + 1],
        })
    }

    fn n(&self) -> usize {
        self.ys.len()
    }

    /// Returns `(Σ ln v*_t, weighted Gram of [L(X), L(y)])`.
    fn run(&mut self, q_ratio: &[f64]) -> f64 {
        let d = self.d;
        let w = d + 1;
        self.p.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            self.p[i * d + i] = 1.0;
        }
        self.means.iter_mut().for_each(|v| *v = 0.0);
        self.gram.iter_mut().for_each(|v| *v = 0.0);
        let mut sum_log_v = 0.0;
        for t in 0..self.n() {
            let x = &self.xs[t * d..(t + 1) * d];
            for i in 0..d {
                self.p[i * d + i] += q_ratio[i];
            }
            // s = P x, v = 1 + xᵀ s
            let mut v = 1.0;
            for i in 0..d {
                let row = &self.p[i * d..(i + 1) * d];
                let si: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                self.s[i] = si;
                v += x[i] * si;
            }
            sum_log_v += v.ln();
            // innovations of every data column; column d is y
            for c in 0..w {
                let m = &self.means[c * d..(c + 1) * d];
                let pred: f64 = m.iter().zip(x).map(|(a, b)| a * b).sum();
                let data = if c < d { x[c] } else { self.ys[t] };
                self.e[c] = data - pred;
            }
            for c in 0..w {
                let f = self.e[c] / v;
                let m = &mut self.means[c * d..(c + 1) * d];
                for (mi, si) in m.iter_mut().zip(&self.s) {
                    *mi += si * f;
                }
            }
            let inv_v = 1.0 / v;
            for a in 0..w {
                let ea = self.e[a] * inv_v;
                for b in a..w {
                    self.gram[a * w + b] += ea * self.e[b];
                }
            }
            // P -= s sᵀ / v
            for i in 0..d {
                let si = self.s[i] * inv_v;
                let row = &mut self.p[i * d..(i + 1) * d];
                for (pij, sj) in row.iter_mut().zip(&self.s) {
                    *pij -= si * sj;
                }
            }
        }
        sum_log_v
    }

    fn solve(&mut self, q_ratio: &[f64]) -> Result<ClosedFormInit> {
        let d = self.d;
        let w = d + 1;
        let sum_log_v = self.run(q_ratio);
        let a = DMatrix::from_fn(d, d, |i, j| {
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            self.gram[lo * w + hi]
        });
        for i in 0..d {
            self.rhs[i] = self.gram[i * w + d];
        }
        let b = DVector::from_column_slice(&self.rhs[..d]);
        let yy = self.gram[d * w + d];
        let theta1 = solve_spd(&a, &DMatrix::from_column_slice(d, 1, b.as_slice()), 1e-14)?
            .column(0)
            .into_owned();
        let n = self.n() as f64;
        let weighted_rss = (yy - theta1.dot(&b)).max(0.0);
        let sigma2 = weighted_rss / n;
        let log_likelihood = if sigma2 > 0.0 {
            -0.5 * (n * LN_2PI + n * sigma2.ln() + sum_log_v + n)
        } else {
            f64::INFINITY
        };
        Ok(ClosedFormInit {
            theta1,
            sigma2,
            log_likelihood,
        })
    }
}

/// Closed-form `(θ̂₁, σ²)` for a given diagonal `Q/σ²`.
pub fn closed_form_init(q_ratio: &[f64], obs: &[Observation]) -> Result<ClosedFormInit> {
    let mut ws = ProfileWorkspace::new(obs)?;
    if q_ratio.len() != ws.d {
        return Err(Error::DimensionMismatch {
            expected: ws.d,
            found: q_ratio.len(),
        });
    }
    ws.solve(q_ratio)
}

/// Outcome of the greedy search over diagonal `Q/σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QSearch {
    pub q_ratio: Vec<f64>,
    pub init: ClosedFormInit,
    /// Profile log-likelihood of `Q/σ² = 0`.
    pub zero_log_likelihood: f64,
    /// Accepted moves: coordinate, new value, log-likelihood after the move.
    pub path: Vec<(usize, f64, f64)>,
}

/// Greedy coordinate search: from `Q/σ² = 0`, repeatedly apply the single
/// coordinate change that improves the profile likelihood most; stop when
/// no change improves.
pub fn greedy_q_search(obs: &[Observation], grid: QGrid) -> Result<QSearch> {
    let mut ws = ProfileWorkspace::new(obs)?;
    let d = ws.d;
    if obs.len() < 10 * d {
        return Err(Error::InsufficientHistory(format!(
            "{} observations for dimension {d}, need {}",
            obs.len(),
            10 * d
        )));
    }
    let values = grid.values();
    let mut current = vec![0.0; d];
    let mut best = ws.solve(&current)?;
    let zero_log_likelihood = best.log_likelihood;
    if !zero_log_likelihood.is_finite() {
        // exact fit (σ² = 0) or degenerate data; nothing to improve on
        if zero_log_likelihood == f64::INFINITY {
            return Ok(QSearch {
                q_ratio: current,
                init: best,
                zero_log_likelihood,
                path: vec![],
            });
        }
        return Err(Error::SearchFailed("non-finite likelihood at Q = 0".into()));
    }
    let mut path = Vec::new();
    let mut trial = current.clone();
    loop {
        let mut step: Option<(usize, f64, ClosedFormInit)> = None;
        for i in 0..d {
            for &v in &values {
                if v == current[i] {
                    continue;
                }
                trial.copy_from_slice(&current);
                trial[i] = v;
                let Ok(cand) = ws.solve(&trial) else { continue };
                if !cand.log_likelihood.is_finite() {
                    continue;
                }
                let to_beat = step
                    .as_ref()
                    .map_or(best.log_likelihood, |s| s.2.log_likelihood);
                if cand.log_likelihood > to_beat {
                    step = Some((i, v, cand));
                }
            }
        }
        match step {
            Some((i, v, cand)) => {
                current[i] = v;
                path.push((i, v, cand.log_likelihood));
                best = cand;
            }
            None => break,
        }
    }
    Ok(QSearch {
        q_ratio: current,
        init: best,
        zero_log_likelihood,
        path,
    })
}

/// Exact Gaussian log-likelihood of a filter with the given start and schedule.
pub fn filter_log_likelihood(
    state: &KalmanState,
    schedule: &QSchedule,
    obs: &[Observation],
) -> Result<f64> {
    let mut f = KalmanFilter::new(
        state.clone(),
        schedule.clone(),
        VarianceSetting {
            kind: AdaptationKind::Static,
            break_at: None,
            q_ratio: None,
            q_scalar: None,
        },
    );
    f.run(obs)
}

/// Data needed to resolve a variance setting.
#[derive(Debug, Clone, Copy)]
pub struct SettingInputs<'a> {
    /// Training observations (dynamic settings are tuned on these).
    pub train: &'a [Observation],
    /// All observations available when the setting is chosen, from the
    /// first one on; the big setting is scored on those from `big_window_start`.
    pub history: &'a [Observation],
    pub big_window_start: NaiveDateTime,
    pub break_at: Option<NaiveDateTime>,
    pub grid: QGrid,
}

/// Builds the initial filter for a variance setting.
pub fn make_setting(kind: AdaptationKind, inputs: SettingInputs<'_>) -> Result<KalmanFilter> {
    let d = inputs
        .train
        .first()
        .or(inputs.history.first())
        .map(|o| o.x.len())
        .ok_or_else(|| Error::InsufficientHistory("no observations".into()))?;
    let eye = DMatrix::<f64>::identity(d, d);
    let mut setting = VarianceSetting {
        kind,
        break_at: None,
        q_ratio: None,
        q_scalar: None,
    };
    if kind.needs_break() {
        setting.break_at = Some(
            inputs
                .break_at
                .ok_or_else(|| Error::Config(format!("{} needs a break time", kind.name())))?,
        );
    }
    let state = match kind {
        AdaptationKind::Static | AdaptationKind::StaticBreak => KalmanState::standard(d),
        AdaptationKind::Dynamic | AdaptationKind::DynamicBreak => {
            let search = greedy_q_search(inputs.train, inputs.grid)?;
            let sigma2 = search.init.sigma2.max(f64::MIN_POSITIVE);
            setting.q_ratio = Some(search.q_ratio);
            KalmanState::new(search.init.theta1, &eye * sigma2, sigma2)
        }
        AdaptationKind::DynamicBig => {
            let q = select_big_q(inputs.history, inputs.big_window_start, inputs.grid)?;
            setting.q_scalar = Some(q);
            KalmanState::standard(d)
        }
    };
    let schedule = schedule_for(&setting, d, state.sigma2);
    Ok(KalmanFilter::new(state, schedule, setting))
}

/// Picks `q` in the grid maximising the likelihood of `σ² = 1`, `Q = qI`
/// on the observations from `window_start`, filtering from the first one.
pub fn select_big_q(
    history: &[Observation],
    window_start: NaiveDateTime,
    grid: QGrid,
) -> Result<f64> {
    let d = history
        .first()
        .map(|o| o.x.len())
        .ok_or_else(|| Error::InsufficientHistory("no observations".into()))?;
    let split = history.partition_point(|o| o.timestamp < window_start);
    if split == history.len() {
        return Err(Error::InsufficientHistory("empty selection window".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for q in grid.values() {
        let mut state = KalmanState::standard(d);
        let qm = DMatrix::<f64>::identity(d, d) * q;
        let mut ll = 0.0;
        let mut ok = true;
        for (i, o) in history.iter().enumerate() {
            match state.step(&o.x, o.y, &qm) {
                Ok(pred) if i >= split => ll += pred.log_likelihood(o.y),
                Ok(_) => {}
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && ll.is_finite() && best.is_none_or(|(_, b)| ll > b) {
            best = Some((q, ll));
        }
    }
    best.map(|(q, _)| q)
        .ok_or_else(|| Error::SearchFailed("non-finite likelihood for every q".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::{Duration, NaiveDate};

    fn t0() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    #[test]
    fn scalar_conjugate_update() {
        let mut s = KalmanState::standard(1);
        let x = DVector::from_element(1, 1.0);
        let pred = s.step(&x, 1.0, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(pred.mean, 0.0);
        assert_eq!(pred.variance, 2.0);
        assert_relative_eq!(s.theta[0], 0.5);
        assert_relative_eq!(s.p[(0, 0)], 0.5);
    }

    #[test]
    fn zero_regressor_only_adds_process_noise() {
        let mut s = KalmanState::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::identity(2, 2),
            3.0,
        );
        let q = DMatrix::identity(2, 2) * 0.5;
        let pred = s.step(&DVector::zeros(2), 10.0, &q).unwrap();
        assert_eq!(pred.mean, 0.0);
        assert_eq!(pred.variance, 3.0);
        assert_eq!(s.theta, DVector::from_vec(vec![1.0, 2.0]));
        assert_relative_eq!(s.p, DMatrix::identity(2, 2) * 1.5);
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let mut s = KalmanState::standard(2);
        let q = DMatrix::zeros(2, 2);
        assert!(matches!(
            s.step(&DVector::zeros(3), 1.0, &q),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            s.step(&DVector::from_vec(vec![f64::NAN, 0.0]), 1.0, &q),
            Err(Error::NonFiniteInput)
        ));
        assert!(matches!(
            s.step(&DVector::zeros(2), f64::INFINITY, &q),
            Err(Error::NonFiniteInput)
        ));
    }

    #[test]
    fn quantiles() {
        let q = gaussian_quantile(100.0, 4.0, 0.975).unwrap();
        assert!((q - (100.0 + 1.959_963_984_540_054 * 2.0)).abs() < 1e-9);
        assert!((q - 103.91993).abs() < 1e-5);
        assert_eq!(gaussian_quantile(5.0, 2.0, 0.5).unwrap(), 5.0);
        let lo = gaussian_quantile(5.0, 2.0, 0.1).unwrap();
        let hi = gaussian_quantile(5.0, 2.0, 0.9).unwrap();
        assert!((lo + hi - 10.0).abs() < 1e-12);
        assert!(matches!(
            gaussian_quantile(0.0, 1.0, 1.0),
            Err(Error::InvalidLevel(_))
        ));
        let s = KalmanState::new(
            DVector::from_vec(vec![2.0]),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
        );
        let v = forecast_quantile(&s, &DVector::from_vec(vec![1.0]), 3.0, 0.5).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn schedule_jump_fires_once() {
        let brk = t0() + Duration::days(5);
        let s = QSchedule::zero(2).with_jump(brk, DMatrix::identity(2, 2));
        let mut fired = 0;
        let mut prev = None;
        for day in 0..10 {
            let t = t0() + Duration::days(day) + Duration::hours(3);
            if s.at(prev, t)[(0, 0)] == 1.0 {
                fired += 1;
                assert_eq!(t.date(), brk.date());
            }
            prev = Some(t);
        }
        assert_eq!(fired, 1);
    }

    fn observations(theta: &[f64], n: usize, noise: f64, seed: u64) -> Vec<Observation> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x = DVector::from_fn(theta.len(), |j, _| {
                    if j == 0 {
                        1.0
                    } else {
                        rng.random_range(-2.0..2.0)
                    }
                });
                let y = x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
                    + noise * rng.random_range(-1.0..1.0);
                Observation {
                    timestamp: t0() + Duration::days(i as i64),
                    x,
                    y,
                }
            })
            .collect()
    }

    #[test]
    fn exact_fit_recovers_theta() {
        let obs = observations(&[1.0, -2.0, 0.5], 60, 0.0, 1);
        let init = closed_form_init(&[0.0; 3], &obs).unwrap();
        assert_relative_eq!(
            init.theta1,
            DVector::from_vec(vec![1.0, -2.0, 0.5]),
            epsilon = 1e-8
        );
        assert!(init.sigma2 < 1e-16);
    }

    #[test]
    fn closed_form_beats_arbitrary_start() {
        let obs = observations(&[1.0, -2.0, 0.5], 80, 0.3, 2);
        let q = [0.0, 2f64.powi(-6), 0.0];
        let init = closed_form_init(&q, &obs).unwrap();
        let sched = QSchedule::constant(diag(&q) * init.sigma2);
        let at_opt = filter_log_likelihood(
            &KalmanState::new(
                init.theta1.clone(),
                DMatrix::identity(3, 3) * init.sigma2,
                init.sigma2,
            ),
            &sched,
            &obs,
        )
        .unwrap();
        assert_relative_eq!(at_opt, init.log_likelihood, epsilon = 1e-8);
        let naive = filter_log_likelihood(
            &KalmanState::standard(3),
            &QSchedule::constant(diag(&q)),
            &obs,
        )
        .unwrap();
        assert!(at_opt >= naive);
    }

    #[test]
    fn static_setting_has_no_process_noise() {
        let obs = observations(&[1.0, 2.0], 50, 0.1, 3);
        let inputs = SettingInputs {
            train: &obs,
            history: &obs,
            big_window_start: obs[25].timestamp,
            break_at: Some(obs[10].timestamp),
            grid: QGrid::default(),
        };
        let f = make_setting(AdaptationKind::Static, inputs).unwrap();
        assert_eq!(f.schedule.base, DMatrix::zeros(2, 2));
        assert!(f.schedule.jump.is_none());
        let f = make_setting(AdaptationKind::StaticBreak, inputs).unwrap();
        assert_eq!(f.schedule.jump.as_ref().unwrap().1, DMatrix::identity(2, 2));
        let f = make_setting(AdaptationKind::DynamicBig, inputs).unwrap();
        let q = f.setting.q_scalar.unwrap();
        assert_eq!(f.schedule.base, DMatrix::identity(2, 2) * q);
        let f = make_setting(AdaptationKind::DynamicBreak, inputs).unwrap();
        let s2 = f.state.sigma2;
        assert_relative_eq!(
            f.schedule.jump.as_ref().unwrap().1,
            DMatrix::identity(2, 2) * s2
        );
        assert_relative_eq!(f.state.p, DMatrix::identity(2, 2) * s2);
    }

    #[test]
    fn snapshot_round_trip() {
        let obs = observations(&[1.0, 2.0], 40, 0.1, 4);
        let inputs = SettingInputs {
            train: &obs,
            history: &obs,
            big_window_start: obs[20].timestamp,
            break_at: Some(obs[10].timestamp),
            grid: QGrid::default(),
        };
        let mut f = make_setting(AdaptationKind::DynamicBreak, inputs).unwrap();
        f.run(&obs[..30]).unwrap();
        let json = serde_json::to_string(&f.snapshot()).unwrap();
        let mut g = serde_json::from_str::<KalmanSnapshot>(&json)
            .unwrap()
            .restore()
            .unwrap();
        let a = f.run(&obs[30..]).unwrap();
        let b = g.run(&obs[30..]).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }
}
