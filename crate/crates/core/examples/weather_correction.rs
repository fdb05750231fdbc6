//! Fits the weather forecast correction and compares errors out of sample.

use chrono::NaiveDate;
use loadcast::data::{gen_synthetic, ScenarioConfig, WeatherVar};
use loadcast::weather::{fit_correction, score_correction, OrderGrid};

fn main() -> loadcast::Result<()> {
    let scenario = ScenarioConfig {
        start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        days: 2 * 365,
        ..ScenarioConfig::default()
    };
    let ds = gen_synthetic(&scenario, 11)?;
    let train_end = NaiveDate::from_ymd_opt(2019, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let split = ds.index_of(train_end).unwrap();
    let grid = OrderGrid {
        p_max: 4,
        big_p_max: 3,
    };

    println!(
        "{:>12} {:>8} {:>8} {:>10}  orders (p, P)",
        "variable", "raw", "lag", "corrected"
    );
    for var in [
        WeatherVar::Temperature,
        WeatherVar::Cloud,
        WeatherVar::Pressure,
        WeatherVar::WindSpeed,
    ] {
        let model = fit_correction(&ds, var, train_end, grid)?;
        let s = score_correction(&model, &ds, split, ds.len())?;
        let orders: Vec<String> = [0, 8, 16]
            .iter()
            .map(|&h| {
                let m = model.hour(h);
                format!("{h:02}h:({},{})", m.p, m.big_p)
            })
            .collect();
        println!(
            "{:>12} {:>8.3} {:>8.3} {:>10.3}  {}",
            var.name(),
            s.raw,
            s.last_daily_lag,
            s.corrected,
            orders.join(" ")
        );
    }
    Ok(())
}
