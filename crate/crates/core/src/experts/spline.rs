//! Cubic B-spline bases and their curvature penalties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Basis of a one-dimensional smooth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    /// Periodic cubic splines on [0, 1] with `intervals` equal knot spans.
    Cyclic { intervals: usize },
    /// Clamped cubic splines on `[knots[0], knots[last]]`, extended
    /// linearly outside that range.
    Cubic { knots: Vec<f64> },
}

/// Uniform cubic B-spline on [0, 4] and its first two derivatives.
fn uniform_cubic(u: f64) -> [f64; 3] {
    if !(0.0..4.0).contains(&u) {
        return [0.0; 3];
    }
    if u < 1.0 {
        [u * u * u / 6.0, u * u / 2.0, u]
    } else if u < 2.0 {
        [
            (-3.0 * u * u * u + 12.0 * u * u - 12.0 * u + 4.0) / 6.0,
            (-9.0 * u * u + 24.0 * u - 12.0) / 6.0,
            -3.0 * u + 4.0,
        ]
    } else if u < 3.0 {
        [
            (3.0 * u * u * u - 24.0 * u * u + 60.0 * u - 44.0) / 6.0,
            (9.0 * u * u - 48.0 * u + 60.0) / 6.0,
            3.0 * u - 8.0,
        ]
    } else {
        let v = 4.0 - u;
        [v * v * v / 6.0, -v * v / 2.0, v]
    }
}

impl Basis {
    pub fn cyclic(intervals: usize) -> Result<Self> {
        if intervals < 4 {
            return Err(Error::InvalidHyperparameter(format!(
                "cyclic basis needs at least 4 intervals, got {intervals}"
            )));
        }
        Ok(Basis::Cyclic { intervals })
    }

    /// Cubic basis with `interior` knots at quantiles of `values`.
    pub fn cubic_at_quantiles(values: &[f64], interior: usize) -> Result<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.len() < interior + 2 {
            return Err(Error::InsufficientHistory(format!(
                "{} values for {interior} knots",
                v.len()
            )));
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        let mut knots = vec![v[0]];
        for k in 1..=interior {
            knots.push(q(k as f64 / (interior + 1) as f64));
        }
        knots.push(v[v.len() - 1]);
        knots.dedup();
        if knots.len() < 2 || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::SingularDesign);
        }
        Ok(Basis::Cubic { knots })
    }

    pub fn len(&self) -> usize {
        match self {
            Basis::Cyclic { intervals } => *intervals,
            Basis::Cubic { knots } => knots.len() + 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Basis values (`order` 0), slopes (1) or curvatures (2) at `x`.
    pub fn eval(&self, x: f64, order: usize) -> Vec<f64> {
        match self {
            Basis::Cyclic { intervals } => {
                let m = *intervals;
                let scale = (m as f64).powi(order as i32);
                (0..m)
                    .map(|j| {
                        let u = (x * m as f64 - j as f64).rem_euclid(m as f64);
                        uniform_cubic(u)[order] * scale
                    })
                    .collect()
            }
            Basis::Cubic { knots } => {
                let a = knots[0];
                let b = knots[knots.len() - 1];
                if x < a || x > b {
                    let edge = if x < a { a } else { b };
                    if order >= 2 {
                        return vec![0.0; self.len()];
                    }
                    let slope = clamped(knots, edge, 1);
                    if order == 1 {
                        return slope;
                    }
                    let value = clamped(knots, edge, 0);
                    return value
                        .iter()
                        .zip(&slope)
                        .map(|(v, s)| v + (x - edge) * s)
                        .collect();
                }
                clamped(knots, x, order)
            }
        }
    }

    /// Gram matrix of curvatures, `∫ B_i''(x) B_j''(x) dx` over the basis range.
    pub fn penalty(&self) -> DMatrix<f64> {
        let breaks: Vec<f64> = match self {
            Basis::Cyclic { intervals } => (0..=*intervals)
                .map(|j| j as f64 / *intervals as f64)
                .collect(),
            Basis::Cubic { knots } => knots.clone(),
        };
        // second derivatives are linear on each span, so 2-point Gauss is exact
        let g = 0.5 / 3f64.sqrt();
        let n = self.len();
        let mut s = DMatrix::zeros(n, n);
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let h = hi - lo;
            for node in [0.5 - g, 0.5 + g] {
                let d2 = self.eval(lo + node * h, 2);
                for i in 0..n {
                    if d2[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        s[(i, j)] += 0.5 * h * d2[i] * d2[j];
                    }
                }
            }
        }
        s
    }
}

/// Clamped cubic B-spline values or derivatives via Cox–de Boor.
fn clamped(breaks: &[f64], x: f64, order: usize) -> Vec<f64> {
    const K: usize = 3;
    let a = breaks[0];
    let b = breaks[breaks.len() - 1];
    let mut t = vec![a; K];
    t.extend_from_slice(breaks);
    t.extend(std::iter::repeat_n(b, K));
    let n = t.len() - K - 1;
    // index of the span containing x, right end folded into the last span
    let span = {
        let mut s = K;
        while s + 1 < n && x >= t[s + 1] {
            s += 1;
        }
        s
    };
    // degree-0 indicators, then raise degree
    let mut vals = vec![0.0; t.len() - 1];
    vals[span] = 1.0;
    let degree_target = K - order.min(K + 1).min(K);
    let mut levels = vec![vals.clone()];
    for k in 1..=K {
        let prev = &levels[k - 1];
        let mut next = vec![0.0; t.len() - k - 1];
        for i in 0..next.len() {
            let mut v = 0.0;
            let d1 = t[i + k] - t[i];
            if d1 > 0.0 {
                v += (x - t[i]) / d1 * prev[i];
            }
            let d2 = t[i + k + 1] - t[i + 1];
            if d2 > 0.0 {
                v += (t[i + k + 1] - x) / d2 * prev[i + 1];
            }
            next[i] = v;
        }
        levels.push(next);
    }
    if order == 0 {
        return levels[K][..n].to_vec();
    }
    if order > K {
        return vec![0.0; n];
    }
    // derivative coefficients applied to lower-degree bases
    let mut coef: Vec<f64> = levels[degree_target].clone();
    for k in (degree_target + 1)..=K {
        let mut next = vec![0.0; t.len() - k - 1];
        for i in 0..next.len() {
            let d1 = t[i + k] - t[i];
            let d2 = t[i + k + 1] - t[i + 1];
            let left = if d1 > 0.0 {
                k as f64 / d1 * coef[i]
            } else {
                0.0
            };
            let right = if d2 > 0.0 {
                k as f64 / d2 * coef[i + 1]
            } else {
                0.0
            };
            next[i] = left - right;
        }
        coef = next;
    }
    coef[..n].to_vec()
}
