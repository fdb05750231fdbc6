//! Configuration-driven backtest under the 8AM availability rule.

mod backtest;
mod config;
mod report;
mod select;

pub use backtest::{prepare, run_backtest, simulate, Backtest, Prepared};
pub use config::{
    AggregationOptions, DataSource, ExpertSpec, IntradayOptions, KalmanOptions, PipelineConfig,
    RosterEntry, Setting, WeatherOptions,
};
pub use report::{emit_report, evaluate, load_report, mae, BacktestReport, Metrics, RuntimeStats};
pub use select::{select, SelectionReport};
