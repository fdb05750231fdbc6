//! Generates a synthetic hourly load dataset and looks at its features.
//!
//! Run with `cargo run --example synthetic_data`.

use chrono::NaiveDate;
use loadcast::data::{build_features, gen_synthetic, write_csv, ScenarioConfig};

fn main() -> loadcast::Result<()> {
    let scenario = ScenarioConfig {
        start: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
        days: 60,
        noise_ar: 0.9,
        ..ScenarioConfig::default()
    };
    let ds = gen_synthetic(&scenario, 7)?;
    println!(
        "{} hourly rows from {} to {}",
        ds.len(),
        ds.start().unwrap(),
        ds.end().unwrap()
    );

    let frame = build_features(&ds)?;
    println!(
        "{:>20} {:>4} {:>8} {:>7} {:>9} {:>9}",
        "timestamp", "dow", "temp", "toy", "load", "load_d"
    );
    for i in (24 * 14..24 * 15).step_by(3) {
        let r = frame.row(i);
        println!(
            "{:>20} {:>4} {:>8.2} {:>7.4} {:>9.1} {:>9.1}",
            r.timestamp.to_string(),
            r.day_of_week,
            r.temp,
            r.toy,
            r.load.unwrap_or(f64::NAN),
            r.load_d.unwrap_or(f64::NAN)
        );
    }

    // the same CSV layout the CLI reads back in
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf)?;
    let text = String::from_utf8(buf).expect("utf-8");
    for line in text.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
