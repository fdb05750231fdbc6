//! End-to-end backtest from a JSON configuration, written to a report directory.

use loadcast::pipeline::{emit_report, evaluate, run_backtest, PipelineConfig};

const CONFIG: &str = r#"{
  "data": {"synthetic": {
    "start": "2017-01-01", "days": 1000, "noise_std": 10.0, "noise_ar": 0.95,
    "break_at": "2018-07-02T00:00:00", "break_scale": 0.85
  }},
  "segmentation": {
    "train_end": "2018-07-02T00:00:00",
    "adaptation_start": "2018-07-02T00:00:00",
    "aggregation_start": "2019-01-01T00:00:00",
    "validation": {"start": "2019-01-01T00:00:00", "end": "2019-03-01T00:00:00"},
    "test": {"start": "2019-03-01T00:00:00", "end": "2019-09-01T00:00:00"}
  },
  "roster": [
    {"families": ["linear", "ar"], "settings": ["offline", "dynamic_big"], "intraday": [false, true]}
  ],
  "break_at": "2018-07-02T00:00:00",
  "seed": 1
}"#;

fn main() -> loadcast::Result<()> {
    let mut cfg = PipelineConfig::from_json(CONFIG)?;
    cfg.output_dir = std::env::temp_dir().join("loadcast-backtest");
    let report = run_backtest(&cfg)?;
    emit_report(&report, &cfg, &cfg.output_dir)?;

    let metrics = evaluate(&report, &cfg.segmentation.test)?;
    println!("test window: {} hours", metrics.hours);
    for (name, mae) in &metrics.experts {
        println!("{name:>22}  {mae:>8.2}");
    }
    if let Some(mae) = metrics.aggregation {
        println!("{:>22}  {mae:>8.2}", "aggregation");
    }
    println!("report written to {}", cfg.output_dir.display());
    Ok(())
}
