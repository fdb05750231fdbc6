//! Residual autoregression on the hours that are known at forecast time.

use chrono::NaiveDate;
use loadcast::intraday::{intraday_lags, ResidualSeries, RollingIntraday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> loadcast::Result<()> {
    let start = NaiveDate::from_ymd_opt(2021, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shock = Normal::new(0.0, 5.0).unwrap();

    // forecast residuals with persistent hour-to-hour correlation
    let mut e = 0.0;
    let values: Vec<Option<f64>> = (0..24 * 500)
        .map(|_| {
            e = 0.99 * e + shock.sample(&mut rng);
            Some(e)
        })
        .collect();
    let series = ResidualSeries::new(start, values);

    for h in [0, 12, 23] {
        let lags = intraday_lags(h);
        println!(
            "hour {h:>2} uses residuals {} to {} hours back",
            lags.start,
            lags.end - 1
        );
    }

    // refit once a day on what has been revealed, then correct the next day
    let mut model = RollingIntraday::new(50);
    let (mut raw, mut corrected, mut n) = (0.0, 0.0, 0usize);
    for day in 1..500 {
        let cutoff = 24 * (day - 1) + 9;
        model.advance(&series, cutoff);
        for t in 24 * day..24 * (day + 1) {
            let r = series.values[t].unwrap();
            let c = model.correct(0.0, &series, t)?;
            if day >= 100 {
                raw += r.abs();
                corrected += (r - c).abs();
                n += 1;
            }
        }
    }
    println!(
        "MAE without correction {:.3}, with correction {:.3}",
        raw / n as f64,
        corrected / n as f64
    );
    Ok(())
}
