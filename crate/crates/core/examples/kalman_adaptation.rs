//! State-space adaptation of a linear expert through a level shift.
//!
//! The load drops by 20% halfway through the data. The offline fit keeps
//! forecasting the old level while the filters follow the new one.

use chrono::{Duration, NaiveDate};
use loadcast::data::{build_features_with, gen_synthetic, FeatureOptions, ScenarioConfig};
use loadcast::experts::{ExpertConfig, ExpertModel, Family};
use loadcast::kalman::{make_setting, AdaptationKind, Observation, QGrid, SettingInputs};

fn main() -> loadcast::Result<()> {
    let day = |y, m, d| {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    };
    let break_at = day(2019, 1, 1);
    let scenario = ScenarioConfig {
        start: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
        days: 3 * 365,
        break_at: Some(break_at),
        break_scale: Some(0.8),
        ..ScenarioConfig::default()
    };
    let ds = gen_synthetic(&scenario, 5)?;
    let frame = build_features_with(
        &ds,
        &FeatureOptions {
            trend_end: Some(break_at),
            weather: None,
        },
    )?;
    let expert = ExpertModel::fit(Family::Linear, &frame, break_at, &ExpertConfig::default())?;

    // one filter per hour of the day; this example follows 18:00
    let hour = 18;
    let obs: Vec<Observation> = (0..frame.len())
        .filter(|&i| frame.row(i).hour == hour)
        .filter_map(|i| {
            let r = frame.row(i);
            Some(Observation {
                timestamp: r.timestamp,
                x: expert.feature_map(&frame, i).ok()?,
                y: r.load?,
            })
        })
        .collect();
    let split = obs.partition_point(|o| o.timestamp < break_at);
    let adaptation = split + 60;
    let train = &obs[..split];
    let history = &obs[..adaptation];
    let inputs = SettingInputs {
        train,
        history,
        big_window_start: obs[adaptation].timestamp - Duration::days(182),
        break_at: Some(break_at),
        grid: QGrid::default(),
    };

    let offline = expert.offline_state(hour);
    let offline_mae: f64 = obs[adaptation..]
        .iter()
        .map(|o| (offline.dot(&o.x) - o.y).abs())
        .sum::<f64>()
        / (obs.len() - adaptation) as f64;
    println!("{:>14}  MAE {:>7.2}", "offline", offline_mae);

    for kind in AdaptationKind::ALL {
        let mut filter = make_setting(kind, inputs)?;
        let mut err = 0.0;
        for (i, o) in obs.iter().enumerate() {
            let pred = filter.predict(o.timestamp, &o.x)?;
            if i >= adaptation {
                err += (pred.mean - o.y).abs();
            }
            filter.update(o.timestamp, &o.x, o.y)?;
        }
        let q = match (&filter.setting.q_ratio, filter.setting.q_scalar) {
            (Some(r), _) => format!(
                "Q/σ² nonzero on {} of {} coordinates",
                r.iter().filter(|&&v| v > 0.0).count(),
                r.len()
            ),
            (None, Some(q)) => format!("q = 2^{}", q.log2().round()),
            _ => String::new(),
        };
        println!(
            "{:>14}  MAE {:>7.2}  {q}",
            kind.name(),
            err / (obs.len() - adaptation) as f64
        );
    }
    Ok(())
}
