//! Variational tracking of the state and of its variances.
//!
//! The observation and process variances become latent log-variances
//! following random walks:
//!
//! ```text
//! a_t − a_{t−1} ~ N(0, ρ_a)        b_t − b_{t−1} ~ N(0, ρ_b)
//! θ_t − θ_{t−1} ~ N(0, e^{b_t} I)  y_t − θ_tᵀx_t ~ N(0, e^{a_t})
//! ```
//!
//! The posterior is approximated by a product of three Gaussians on `θ`,
//! `a` and `b`, refined by alternating updates. The `a` and `b` factors are
//! Laplace approximations of their own objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{row_major, KalmanState, Prediction};
use crate::linalg::symmetrize;

/// Floor applied to the process variance before taking its log.
pub const Q_FLOOR: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 200;

/// Hyper-parameters of the variance dynamics and of the initial beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VikingParams {
    pub rho_a: f64,
    pub rho_b: f64,
    pub s0: f64,
    pub sigma0: f64,
    /// Number of alternating refinement passes per observation.
    #[serde(default = "default_iters")]
    pub iters: usize,
}

fn default_iters() -> usize {
    2
}

impl Default for VikingParams {
    fn default() -> Self {
        Self {
            rho_a: 1e-5,
            rho_b: 1e-5,
            s0: 0.1,
            sigma0: 0.1,
            iters: 2,
        }
    }
}

impl VikingParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho_a", self.rho_a),
            ("rho_b", self.rho_b),
            ("s0", self.s0),
            ("sigma0", self.sigma0),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidHyperparameter(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        if self.iters == 0 {
            return Err(Error::InvalidHyperparameter(
                "iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VikingState {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Mean and variance of the log observation variance.
    pub a: f64,
    pub s: f64,
    /// Mean and variance of the log process variance.
    pub b: f64,
    pub sigma: f64,
    pub rho_a: f64,
    pub rho_b: f64,
}

/// Starts from a Kalman initialisation with `σ²` and `Q = qI`.
pub fn init_viking(kalman: &KalmanState, q: f64, params: &VikingParams) -> Result<VikingState> {
    params.validate()?;
    if !(kalman.sigma2 > 0.0) || !kalman.sigma2.is_finite() {
        return Err(Error::InvalidHyperparameter(format!(
            "sigma2 must be positive, got {}",
            kalman.sigma2
        )));
    }
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::InvalidHyperparameter(format!(
            "q must be non-negative, got {q}"
        )));
    }
    Ok(VikingState {
        theta: kalman.theta.clone(),
        p: kalman.p.clone(),
        a: kalman.sigma2.ln(),
        s: params.s0,
        b: q.max(Q_FLOOR).ln(),
        sigma: params.sigma0,
        rho_a: params.rho_a,
        rho_b: params.rho_b,
    })
}

/// Root of the decreasing function `f` inside `[lo, hi]`, where
/// `f(lo) ≥ 0 ≥ f(hi)`. Newton steps, with bisection whenever a step leaves
/// the bracket.
fn monotone_root<F>(f: F, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = 0.5 * (lo + hi);
    for _ in 0..NEWTON_MAX_ITERS {
        let (fx, dfx) = f(x);
        if !fx.is_finite() {
            return Err(Error::NewtonDiverged);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-13 * (1.0 + x.abs()) || hi - lo <= 1e-13 * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NewtonDiverged)
}

/// Objective for the log observation variance.
pub fn g_a(a: f64, m: f64, prior_mean: f64, prior_var: f64) -> f64 {
    -0.5 * (a + m * (-a).exp()) - (a - prior_mean).powi(2) / (2.0 * prior_var)
}

/// Objective for the log process variance in dimension `d`.
pub fn g_b(b: f64, w: f64, d: f64, prior_mean: f64, prior_var: f64) -> f64 {
    -0.5 * (d * b + w * (-b).exp()) - (b - prior_mean).powi(2) / (2.0 * prior_var)
}

/// Laplace update of a log-variance with objective
/// `−½(k·z + c·e^{−z}) − (z − μ)²/(2v)`. A zero prior variance freezes it.
fn log_variance_update(k: f64, c: f64, mu: f64, v: f64) -> Result<(f64, f64)> {
    if v == 0.0 {
        return Ok((mu, 0.0));
    }
    let c = c.max(0.0);
    // stationarity: ½c·e^{−z} = ½k + (z − μ)/v, left side falling, right side rising
    let f = |z: f64| {
        let e = c * (-z).exp();
        (0.5 * e - 0.5 * k - (z - mu) / v, -0.5 * e - 1.0 / v)
    };
    let at_mu = 0.5 * (c * (-mu).exp() - k);
    let (lo, hi) = if at_mu >= 0.0 {
        let mut hi = mu + v * 0.5 * c * (-mu).exp();
        if c > 0.0 && k > 0.0 {
            hi = hi.min((c / k).ln().max(mu));
        }
        (mu, hi)
    } else {
        (mu - 0.5 * k * v, mu)
    };
    let mode = monotone_root(f, lo, hi)?;
    let d2 = f(mode).1;
    Ok((mode, -1.0 / d2))
}

impl VikingState {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    /// Expected process variance `E[e^b]`.
    pub fn process_variance(&self) -> f64 {
        (self.b + self.sigma / 2.0).exp()
    }

    /// Expected observation variance `E[e^a]`.
    pub fn observation_variance(&self) -> f64 {
        (self.a + self.s / 2.0).exp()
    }

    /// Forecast after the prediction phase, without updating.
    pub fn predict(&self, x: &DVector<f64>) -> Result<Prediction> {
        self.check(x)?;
        let s = self.s + self.rho_a;
        let sigma = self.sigma + self.rho_b;
        let q = (self.b + sigma / 2.0).exp();
        let px = &self.p * x;
        Ok(Prediction {
            mean: self.theta.dot(x),
            variance: x.dot(&px) + q * x.dot(x) + (self.a + s / 2.0).exp(),
        })
    }

    /// Processes one observation. Returns the forecast made before seeing `y`.
    pub fn step(&mut self, x: &DVector<f64>, y: f64, iters: usize) -> Result<Prediction> {
        self.check(x)?;
        if !y.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        if iters == 0 {
            return Err(Error::InvalidHyperparameter(
                "iters must be at least 1".into(),
            ));
        }
        let d = self.dim();
        let eye = DMatrix::<f64>::identity(d, d);
        let a_prior = (self.a, self.s + self.rho_a);
        let b_prior = (self.b, self.sigma + self.rho_b);
        let theta_prev = self.theta.clone();
        let p_prev = self.p.clone();

        let (mut a, mut s) = a_prior;
        let (mut b, mut sigma) = b_prior;
        let p_pred0 = &p_prev + &eye * (b + sigma / 2.0).exp();
        let mean = theta_prev.dot(x);
        let variance = x.dot(&(&p_pred0 * x)) + (a + s / 2.0).exp();
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::NonFiniteInput);
        }

        let mut theta = theta_prev.clone();
        let mut p = p_pred0.clone();
        for _ in 0..iters {
            // state given the current variance beliefs
            let p_pred = &p_prev + &eye * (b + sigma / 2.0).exp();
            let obs_var = (a - s / 2.0).exp();
            let px = &p_pred * x;
            let v = obs_var + x.dot(&px);
            let gain = &px / v;
            theta = &theta_prev + &gain * (y - mean);
            let j = &eye - &gain * x.transpose();
            p = &j * &p_pred * j.transpose() + &gain * gain.transpose() * obs_var;
            symmetrize(&mut p);

            let resid = y - theta.dot(x);
            // xᵀPx in closed form; the matrix product can go negative on badly scaled inputs
            let sx = (v - obs_var).max(0.0);
            let m = resid * resid + obs_var * sx / (obs_var + sx);
            (a, s) = log_variance_update(1.0, m, a_prior.0, a_prior.1)?;

            // E‖θ_t − θ_{t−1}‖² under the posterior of the increment given y_t:
            // mean q·x·e/v, covariance qI − q²xxᵀ/v
            let q = (b + sigma / 2.0).exp();
            let xx = x.norm_squared();
            let innov = y - mean;
            let w = q * q * xx * innov * innov / (v * v) + d as f64 * q - q * q * xx / v;
            (b, sigma) = log_variance_update(d as f64, w, b_prior.0, b_prior.1)?;
        }
        if !theta.iter().all(|v| v.is_finite()) || !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        self.theta = theta;
        self.p = p;
        self.a = a;
        self.s = s;
        self.b = b;
        self.sigma = sigma;
        Ok(Prediction { mean, variance })
    }

    pub fn snapshot(&self) -> VikingSnapshot {
        VikingSnapshot {
            theta: self.theta.iter().cloned().collect(),
            p: row_major(&self.p),
            a: self.a,
            s: self.s,
            b: self.b,
            sigma: self.sigma,
            rho_a: self.rho_a,
            rho_b: self.rho_b,
        }
    }
}

/// Serializable VIKING state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VikingSnapshot {
    pub theta: Vec<f64>,
    /// Row-major covariance.
    pub p: Vec<f64>,
    pub a: f64,
    pub s: f64,
    pub b: f64,
    pub sigma: f64,
    pub rho_a: f64,
    pub rho_b: f64,
}

impl VikingSnapshot {
    pub fn restore(&self) -> Result<VikingState> {
        let d = self.theta.len();
        if self.p.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: self.p.len(),
            });
        }
        Ok(VikingState {
            theta: DVector::from_vec(self.theta.clone()),
            p: DMatrix::from_row_slice(d, d, &self.p),
            a: self.a,
            s: self.s,
            b: self.b,
            sigma: self.sigma,
            rho_a: self.rho_a,
            rho_b: self.rho_b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn init_from_kalman() {
        let k = KalmanState::standard(3);
        let p = VikingParams::default();
        let v = init_viking(&k, 1.0, &p).unwrap();
        assert_eq!(v.a, 0.0);
        assert_eq!(v.b, 0.0);
        let v = init_viking(&k, 0.0, &p).unwrap();
        assert_eq!(v.b, Q_FLOOR.ln());
        let bad = VikingParams { rho_a: -1.0, ..p };
        assert!(matches!(
            init_viking(&k, 1.0, &bad),
            Err(Error::InvalidHyperparameter(_))
        ));
    }

    #[test]
    fn laplace_mode_matches_stationarity() {
        let (mode, var) = log_variance_update(1.0, 4.0, 0.0, 2.0).unwrap();
        let grad = -0.5 + 0.5 * 4.0 * (-mode).exp() - mode / 2.0;
        assert!(grad.abs() < 1e-9);
        assert_relative_eq!(
            var,
            1.0 / (0.5 * 4.0 * (-mode).exp() + 0.5),
            epsilon = 1e-12
        );
        assert!(g_a(mode, 4.0, 0.0, 2.0) >= g_a(0.0, 4.0, 0.0, 2.0));
        // zero residual drives the mode below the prior mean
        let (mode, _) = log_variance_update(1.0, 0.0, 0.0, 2.0).unwrap();
        assert_relative_eq!(mode, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn learns_small_observation_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = [2.0, -1.0];
        let k = KalmanState::standard(2);
        let mut v = init_viking(
            &k,
            1e-6,
            &VikingParams {
                rho_a: 0.0,
                rho_b: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let mut avgs = Vec::new();
        let mut acc = 0.0;
        for t in 0..600 {
            let x = DVector::from_vec(vec![1.0, rng.random_range(-1.0..1.0)]);
            let noise: f64 = rng.sample(StandardNormal);
            let y = theta[0] * x[0] + theta[1] * x[1] + 1e-3 * noise;
            v.step(&x, y, 2).unwrap();
            acc += v.a;
            if t % 100 == 99 {
                avgs.push(acc / 100.0);
                acc = 0.0;
            }
        }
        assert!(avgs.windows(2).all(|w| w[1] < w[0]), "{avgs:?}");
    }

    #[test]
    fn snapshot_round_trip() {
        let k = KalmanState::standard(2);
        let mut v = init_viking(&k, 0.01, &VikingParams::default()).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.5]);
        v.step(&x, 3.0, 2).unwrap();
        let json = serde_json::to_string(&v.snapshot()).unwrap();
        let w = serde_json::from_str::<VikingSnapshot>(&json)
            .unwrap()
            .restore()
            .unwrap();
        assert_eq!(v, w);
    }
}
