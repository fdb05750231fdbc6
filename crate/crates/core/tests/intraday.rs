mod common;

use chrono::Duration;
use common::*;
use loadcast::data::forecast_cutoff;
use loadcast::intraday::{apply_intraday, fit_intraday, intraday_lags, ResidualSeries};

fn series(n: usize, phi: f64, seed: u64) -> ResidualSeries {
    let mut r = rng(seed);
    let mut e = 0.0;
    let scale = (1.0 - phi * phi).sqrt();
    let values = (0..n)
        .map(|_| {
            e = phi * e + scale * 10.0 * normal(&mut r);
            Some(e)
        })
        .collect();
    ResidualSeries::new(ts(2021, 1, 1), values)
}

/// Held-out MAE of the raw residuals and of the corrected ones.
fn held_out(s: &ResidualSeries, train: usize) -> (f64, f64) {
    let model = fit_intraday(s, 0..train).unwrap();
    let (mut raw, mut corrected) = (0.0, 0.0);
    for t in train..s.len() {
        let r = s.values[t].unwrap();
        // residual of the corrected forecast: y − (f + c) = r − c
        let c = apply_intraday(&model, 0.0, s, t).unwrap();
        raw += r.abs();
        corrected += (r - c).abs();
    }
    let n = (s.len() - train) as f64;
    (raw / n, corrected / n)
}

#[test]
fn correlated_noise_is_partly_predictable() {
    // a held-out month after a long training span
    let s = series(24 * 1030, 0.97, 41);
    let (raw, corrected) = held_out(&s, 24 * 1000);
    assert!(corrected < raw, "{corrected} vs {raw}");
}

#[test]
fn white_noise_is_left_alone() {
    let s = series(24 * 1100, 0.0, 42);
    let (raw, corrected) = held_out(&s, 24 * 1000);
    assert!((corrected / raw - 1.0).abs() < 0.02, "{corrected} vs {raw}");
}

#[test]
fn every_lag_is_visible_at_the_cutoff() {
    let day = ts(2021, 3, 10).date();
    for h in 0..24u32 {
        let target = day.and_hms_opt(h, 0, 0).unwrap();
        for lag in intraday_lags(h) {
            assert!(
                target - Duration::hours(lag as i64) <= forecast_cutoff(day),
                "hour {h} lag {lag}"
            );
        }
        // the freshest one is exactly the cutoff
        assert_eq!(
            target - Duration::hours(intraday_lags(h).start as i64),
            forecast_cutoff(day)
        );
    }
}
