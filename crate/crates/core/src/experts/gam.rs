//! Spline additive model:
//!
//! ```text
//! y = Σ β_i 1{day = i} + γ·Temps95 + f₁(Toy) + f₂(LoadD) + f₃(LoadW) + α·t + β₀
//! ```
//!
//! with `f₁` a periodic cubic spline and `f₂`, `f₃` cubic splines, fitted by
//! penalised least squares with one curvature penalty per smooth.

use chrono::NaiveDateTime;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spline::Basis;
use super::training_rows;
use crate::data::{FeatureFrame, FeatureRow};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

/// `[1, day effect, γ·Temps95, f₁(Toy), f₂(LoadD), f₃(LoadW), α·t]`
pub const FEATURE_DIM: usize = 7;
const SATURDAY: u32 = 5;
const DUMMIES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GamConfig {
    /// Knot spans of the periodic time-of-year spline.
    pub toy_intervals: usize,
    /// Interior knots of the load-lag splines, at training quantiles.
    pub lag_knots: usize,
    /// Candidate smoothing parameters for cross-validation.
    pub lambda_grid: Vec<f64>,
    /// Fixed smoothing parameters for `(f₁, f₂, f₃)`, bypassing selection.
    pub lambda: Option<[f64; 3]>,
    /// Coordinate sweeps of the GCV search.
    pub gcv_sweeps: usize,
    /// Minimum span of the training rows, in days.
    pub min_training_days: i64,
}

impl Default for GamConfig {
    fn default() -> Self {
        Self {
            toy_intervals: 11,
            lag_knots: 5,
            lambda_grid: (-4..=4).map(|k| 10f64.powi(k)).collect(),
            lambda: None,
            gcv_sweeps: 2,
            min_training_days: 364,
        }
    }
}

/// A fitted smooth, centred on its training mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smooth {
    pub basis: Basis,
    pub center: Vec<f64>,
    pub coef: Vec<f64>,
}

impl Smooth {
    pub fn eval(&self, x: f64) -> f64 {
        self.basis
            .eval(x, 0)
            .iter()
            .zip(&self.center)
            .zip(&self.coef)
            .map(|((b, c), w)| (b - c) * w)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamHour {
    /// Day effects indexed Monday = 0 … Sunday = 6; Sunday is the baseline.
    pub day: [f64; 7],
    pub gamma: f64,
    pub toy: Smooth,
    pub load_d: Smooth,
    pub load_w: Smooth,
    pub alpha: f64,
    pub intercept: f64,
    pub lambda: [f64; 3],
}

impl GamHour {
    fn effects(&self, r: &FeatureRow, saturday: bool) -> Option<[f64; FEATURE_DIM]> {
        let dow = if saturday { SATURDAY } else { r.day_of_week };
        Some([
            1.0,
            self.day[dow as usize],
            self.gamma * r.temps95,
            self.toy.eval(r.toy),
            self.load_d.eval(r.load_d?),
            self.load_w.eval(r.load_w?),
            self.alpha * r.trend,
        ])
    }

    pub fn predict(&self, r: &FeatureRow, saturday: bool) -> Option<f64> {
        let e = self.effects(r, saturday)?;
        Some(self.intercept + e[1..].iter().sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamModel {
    pub hours: Vec<GamHour>,
}

impl GamModel {
    pub fn fit(frame: &FeatureFrame, train_end: NaiveDateTime, cfg: &GamConfig) -> Result<Self> {
        let hours = (0..24u32)
            .map(|h| {
                fit_hour(frame, train_end, h, cfg).map_err(|e| e.context(format!("GAM hour {h}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { hours })
    }

    pub fn feature_map(&self, r: &FeatureRow, saturday: bool) -> Option<Vec<f64>> {
        self.hours[r.hour as usize]
            .effects(r, saturday)
            .map(|e| e.to_vec())
    }

    pub fn offline_state(&self, hour: usize) -> DVector<f64> {
        let mut theta = DVector::from_element(FEATURE_DIM, 1.0);
        theta[0] = self.hours[hour].intercept;
        theta
    }
}

struct Layout {
    toy: std::ops::Range<usize>,
    load_d: std::ops::Range<usize>,
    load_w: std::ops::Range<usize>,
    width: usize,
}

impl Layout {
    fn new(toy: usize, load_d: usize, load_w: usize) -> Self {
        let a = DUMMIES + 1;
        let b = a + toy;
        let c = b + load_d;
        let d = c + load_w;
        // trend and intercept follow the smooths
        Layout {
            toy: a..b,
            load_d: b..c,
            load_w: c..d,
            width: d + 2,
        }
    }

    fn blocks(&self) -> [std::ops::Range<usize>; 3] {
        [self.toy.clone(), self.load_d.clone(), self.load_w.clone()]
    }
}

fn fit_hour(
    frame: &FeatureFrame,
    train_end: NaiveDateTime,
    hour: u32,
    cfg: &GamConfig,
) -> Result<GamHour> {
    let rows = training_rows(frame, train_end, hour);
    let (Some(&first), Some(&last)) = (rows.first(), rows.last()) else {
        return Err(Error::InsufficientHistory("no training rows".into()));
    };
    let span = (frame.row(last).timestamp - frame.row(first).timestamp).num_days();
    if span < cfg.min_training_days {
        return Err(Error::InsufficientHistory(format!(
            "training covers {span} days, need {}",
            cfg.min_training_days
        )));
    }
    let rs: Vec<&FeatureRow> = rows.iter().map(|&i| frame.row(i)).collect();
    let load_d: Vec<f64> = rs.iter().map(|r| r.load_d.unwrap()).collect();
    let load_w: Vec<f64> = rs.iter().map(|r| r.load_w.unwrap()).collect();
    let bases = [
        Basis::cyclic(cfg.toy_intervals)?,
        Basis::cubic_at_quantiles(&load_d, cfg.lag_knots)?,
        Basis::cubic_at_quantiles(&load_w, cfg.lag_knots)?,
    ];
    let layout = Layout::new(bases[0].len(), bases[1].len(), bases[2].len());
    let n = rs.len();
    if n < 2 * layout.width {
        return Err(Error::InsufficientHistory(format!(
            "{n} rows for {} coefficients",
            layout.width
        )));
    }

    let mut x = DMatrix::zeros(n, layout.width);
    for (i, r) in rs.iter().enumerate() {
        if r.day_of_week < DUMMIES as u32 {
            x[(i, r.day_of_week as usize)] = 1.0;
        }
        x[(i, DUMMIES)] = r.temps95;
        let values = [r.toy, load_d[i], load_w[i]];
        for (k, block) in layout.blocks().into_iter().enumerate() {
            for (j, b) in block.zip(bases[k].eval(values[k], 0)) {
                x[(i, j)] = b;
            }
        }
        x[(i, layout.width - 2)] = r.trend;
        x[(i, layout.width - 1)] = 1.0;
    }
    let centers: Vec<Vec<f64>> = layout
        .blocks()
        .into_iter()
        .map(|block| {
            block
                .map(|j| {
                    let m = x.column(j).mean();
                    x.column_mut(j).add_scalar_mut(-m);
                    m
                })
                .collect()
        })
        .collect();
    let y = DVector::from_iterator(n, rs.iter().map(|r| r.load.unwrap()));
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let yty = y.norm_squared();

    // Curvature penalty scaled to the data block, plus a rank-one term on the
    // constant direction, which centring has made invisible to the data.
    let penalties: Vec<DMatrix<f64>> = layout
        .blocks()
        .into_iter()
        .zip(&bases)
        .map(|(block, basis)| {
            let k = basis.len();
            let curv = basis.penalty();
            let data = xtx.view((block.start, block.start), (k, k)).norm();
            let scale = if curv.norm() > 0.0 {
                data / curv.norm()
            } else {
                1.0
            };
            let ones = DMatrix::from_element(k, k, 1.0 / k as f64);
            let mut s = DMatrix::zeros(layout.width, layout.width);
            s.view_mut((block.start, block.start), (k, k))
                .copy_from(&(curv * scale + ones * data.max(1.0)));
            s
        })
        .collect();

    let solve = |lambda: &[f64; 3]| -> Result<(DVector<f64>, f64)> {
        let mut a = xtx.clone();
        for (s, l) in penalties.iter().zip(lambda) {
            a += s * *l;
        }
        let mut rhs = DMatrix::zeros(layout.width, layout.width + 1);
        rhs.view_mut((0, 0), (layout.width, layout.width))
            .copy_from(&xtx);
        rhs.column_mut(layout.width).copy_from(&xty);
        let z = solve_spd(&a, &rhs, 1e-14)?;
        let beta = z.column(layout.width).into_owned();
        let edf = (0..layout.width).map(|i| z[(i, i)]).sum::<f64>();
        let rss = (yty - 2.0 * beta.dot(&xty) + (beta.transpose() * &xtx * &beta)[(0, 0)]).max(0.0);
        let gcv = n as f64 * rss / (n as f64 - edf).powi(2);
        Ok((beta, gcv))
    };

    let lambda = match cfg.lambda {
        Some(l) => l,
        None => {
            let mut best = [1.0; 3];
            let mut best_gcv = solve(&best)?.1;
            for _ in 0..cfg.gcv_sweeps {
                for k in 0..3 {
                    for &cand in &cfg.lambda_grid {
                        let mut trial = best;
                        trial[k] = cand;
                        if let Ok((_, g)) = solve(&trial) {
                            if g < best_gcv {
                                best_gcv = g;
                                best = trial;
                            }
                        }
                    }
                }
            }
            best
        }
    };
    let (beta, _) = solve(&lambda)?;
    let mut day = [0.0; 7];
    day[..DUMMIES].copy_from_slice(&beta.as_slice()[..DUMMIES]);
    let [b0, b1, b2] = bases;
    let smooth = |basis: Basis, block: std::ops::Range<usize>, center: &Vec<f64>| Smooth {
        basis,
        center: center.clone(),
        coef: beta.as_slice()[block].to_vec(),
    };
    Ok(GamHour {
        day,
        gamma: beta[DUMMIES],
        toy: smooth(b0, layout.toy.clone(), &centers[0]),
        load_d: smooth(b1, layout.load_d.clone(), &centers[1]),
        load_w: smooth(b2, layout.load_w.clone(), &centers[2]),
        alpha: beta[layout.width - 2],
        intercept: beta[layout.width - 1],
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::frame_from;
    use super::*;
    use chrono::Duration;

    fn seasonal(toy: f64) -> f64 {
        60.0 * (std::f64::consts::TAU * toy).sin()
            + 25.0 * (2.0 * std::f64::consts::TAU * toy).cos()
    }

    fn fitted(lambda: Option<[f64; 3]>) -> (FeatureFrame, GamModel) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut frame = frame_from(500, |_, _| 700.0);
        for i in 0..frame.len() {
            let r = frame.row(i).clone();
            let (Some(d), Some(w)) = (r.load_d, r.load_w) else {
                continue;
            };
            let dow_effect = [5.0, 6.0, 7.0, 8.0, 9.0, -20.0, -30.0][r.day_of_week as usize];
            let noise: f64 = rng.random_range(-5.0..5.0);
            let y =
                300.0 + seasonal(r.toy) + 0.3 * d + 0.2 * w + 2.0 * r.temps95 + dow_effect + noise;
            frame = frame.with_load(i, Some(y));
        }
        let cfg = GamConfig {
            lambda,
            ..Default::default()
        };
        let m = GamModel::fit(&frame, frame.start() + Duration::days(480), &cfg).unwrap();
        (frame, m)
    }

    #[test]
    fn recovers_seasonal_shape() {
        let (_, m) = fitted(None);
        // the test weather has a yearly cycle, so low noise keeps f₁ identifiable
        for h in &m.hours {
            let grid: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
            let fit: Vec<f64> = grid.iter().map(|&t| h.toy.eval(t)).collect();
            let truth: Vec<f64> = grid.iter().map(|&t| seasonal(t)).collect();
            let corr = pearson(&fit, &truth);
            assert!(corr > 0.99, "correlation {corr}");
            assert!((h.toy.eval(0.0) - h.toy.eval(1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn saturday_variant() {
        let (frame, m) = fitted(Some([1.0; 3]));
        for i in (frame.len() - 7 * 24)..frame.len() {
            let r = frame.row(i);
            let h = &m.hours[r.hour as usize];
            let normal = h.predict(r, false).unwrap();
            let sat = h.predict(r, true).unwrap();
            let expected = h.day[SATURDAY as usize] - h.day[r.day_of_week as usize];
            assert!((sat - normal - expected).abs() < 1e-9);
            if r.day_of_week == SATURDAY {
                assert_eq!(sat, normal);
            }
        }
    }

    #[test]
    fn heavy_penalty_leaves_straight_lines() {
        let (_, m) = fitted(Some([1e9; 3]));
        let h = &m.hours[3];
        // periodic smooth collapses to a constant, which centring removes
        assert!((0..10).all(|i| h.toy.eval(i as f64 / 10.0).abs() < 1e-3));
        let Basis::Cubic { knots } = &h.load_d.basis else {
            unreachable!()
        };
        let slope = |a: f64, b: f64| (h.load_d.eval(b) - h.load_d.eval(a)) / (b - a);
        let (s1, s2) = (slope(knots[0], knots[2]), slope(knots[3], knots[6]));
        assert!((s1 - s2).abs() < 1e-3 * s1.abs().max(1e-3), "{s1} vs {s2}");
    }

    pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
