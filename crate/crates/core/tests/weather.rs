mod common;

use chrono::NaiveDate;
use common::*;
use loadcast::data::{gen_synthetic, HourlyDataset, ScenarioConfig, WeatherVar};
use loadcast::weather::{base_lag, fit_correction, lag_set, score_correction, OrderGrid};
use nalgebra::{DMatrix, DVector};

fn dataset(seed: u64) -> HourlyDataset {
    let scenario = ScenarioConfig {
        start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        days: 2 * 365,
        ..ScenarioConfig::default()
    };
    gen_synthetic(&scenario, seed).unwrap()
}

fn residual(ds: &HourlyDataset, var: WeatherVar, j: usize) -> f64 {
    let r = &ds.records()[j];
    var.observed(r).unwrap() - var.forecast(r)
}

/// Independent BIC for one `(p, P)`, on the rows usable by the widest candidate.
fn oracle_bic(
    ds: &HourlyDataset,
    var: WeatherVar,
    split: usize,
    grid: OrderGrid,
    hour: Option<u32>,
    p: usize,
    big_p: usize,
) -> f64 {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for i in 0..split {
        let rec = &ds.records()[i];
        let h = rec.hour();
        if hour.is_some_and(|f| f != h) {
            continue;
        }
        let widest = lag_set(grid.p_max, grid.big_p_max, h);
        let oldest = widest
            .daily
            .iter()
            .chain(&widest.hourly)
            .chain([&base_lag(h)])
            .max()
            .copied()
            .unwrap();
        if i < oldest {
            continue;
        }
        let lags = lag_set(p, big_p, h);
        let mut row = vec![
            var.forecast(rec),
            var.observed(&ds.records()[i - base_lag(h)]).unwrap(),
        ];
        for &l in &lags.daily {
            row.push(residual(ds, var, i - l));
        }
        for &l in &lags.hourly {
            // an hourly lag equal to a daily one adds nothing
            if hour.is_none() || !lags.daily.contains(&l) {
                row.push(residual(ds, var, i - l));
            }
        }
        match hour {
            Some(_) => row.push(1.0),
            None => row.extend((0..24).map(|k| if k == h { 1.0 } else { 0.0 })),
        }
        rows.push(row);
        y.push(var.observed(rec).unwrap());
    }
    let (n, k) = (rows.len(), rows[0].len());
    let x = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let y = DVector::from_vec(y);
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let rss = (&y - &x * beta).norm_squared();
    n as f64 * (rss / n as f64).ln() + k as f64 * (n as f64).ln()
}

#[test]
fn selected_orders_minimise_bic() {
    let ds = dataset(51);
    let grid = OrderGrid {
        p_max: 3,
        big_p_max: 2,
    };
    let train_end = ts(2019, 1, 1);
    let split = ds.index_of(train_end).unwrap();
    let cases = [
        (WeatherVar::Temperature, Some(3u32)),
        (WeatherVar::Temperature, Some(7)),
        (WeatherVar::Temperature, Some(15)),
        (WeatherVar::Pressure, None),
    ];
    for (var, hour) in cases {
        let model = fit_correction(&ds, var, train_end, grid).unwrap();
        let hm = model.hour(hour.unwrap_or(0));
        let mut best = (f64::INFINITY, 0, 0);
        for p in 0..=grid.p_max {
            for big_p in 0..=grid.big_p_max {
                let b = oracle_bic(&ds, var, split, grid, hour, p, big_p);
                if b < best.0 - 1e-9 * b.abs() {
                    best = (b, p, big_p);
                }
            }
        }
        assert_eq!((hm.p, hm.big_p), (best.1, best.2), "{var:?} {hour:?}");
        let fitted = hm.bic.unwrap();
        assert!(
            (fitted - best.0).abs() <= 1e-6 * best.0.abs(),
            "{fitted} vs {}",
            best.0
        );
    }
}

#[test]
fn correction_beats_raw_out_of_sample() {
    let scenario = ScenarioConfig {
        start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        days: 3 * 365,
        ..ScenarioConfig::default()
    };
    let ds = gen_synthetic(&scenario, 52).unwrap();
    let train_end = ts(2020, 1, 1);
    let split = ds.index_of(train_end).unwrap();
    for var in [
        WeatherVar::Temperature,
        WeatherVar::Cloud,
        WeatherVar::Pressure,
        WeatherVar::WindSpeed,
    ] {
        let model = fit_correction(&ds, var, train_end, OrderGrid::default()).unwrap();
        let s = score_correction(&model, &ds, split, ds.len()).unwrap();
        assert!(s.corrected < s.raw, "{var:?}: {} vs {}", s.corrected, s.raw);
        assert!(s.rows > 300 * 24);
    }
}
