//! Fits every base forecaster offline and scores it on the following months.

use chrono::NaiveDate;
use loadcast::data::{build_features_with, gen_synthetic, FeatureOptions, ScenarioConfig};
use loadcast::experts::{ExpertConfig, ExpertModel, Family};
use std::time::Instant;

fn main() -> loadcast::Result<()> {
    let scenario = ScenarioConfig {
        start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        days: 2 * 365 + 90,
        ..ScenarioConfig::default()
    };
    let ds = gen_synthetic(&scenario, 3)?;
    let train_end = NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let frame = build_features_with(
        &ds,
        &FeatureOptions {
            trend_end: Some(train_end),
            weather: None,
        },
    )?;
    let test = frame.index_of(train_end).unwrap()..frame.len();
    let cfg = ExpertConfig::default();

    for family in Family::ALL {
        let started = Instant::now();
        let model = ExpertModel::fit(family, &frame, train_end, &cfg)?;
        let (mut err, mut n) = (0.0, 0);
        for i in test.clone() {
            let (Some(y), Ok(f)) = (frame.row(i).load, model.predict(&frame, i)) else {
                continue;
            };
            err += (f - y).abs();
            n += 1;
        }
        println!(
            "{:>8}  d = {:>2}  test MAE {:>7.2}  ({:.1?})",
            family.name(),
            model.feature_dim(),
            err / n as f64,
            started.elapsed()
        );
    }
    Ok(())
}
