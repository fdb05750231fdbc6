//! Hourly data model, ingestion, feature construction and availability rules.

mod availability;
mod features;
mod ingest;
mod record;
pub mod synth;

pub use availability::{available_history, forecast_cutoff, Segmentation, Window};
pub use features::{
    build_features, build_features_with, time_of_year, FeatureFrame, FeatureOptions, FeatureRow,
    WeatherInputs,
};
pub use ingest::{ingest_csv, ingest_reader, write_csv, ColumnMap};
pub use record::{HourlyDataset, HourlyRecord, WeatherVar};
pub use synth::{gen_synthetic, ScenarioConfig};

/// Hour of day at or before which the most recent load is one day old.
pub const MORNING_LAST_HOUR: u32 = 7;

/// Most recent available daily lag of the load for a target hour: 24h for
/// hours up to 7AM, 48h afterwards.
pub fn load_d_lag(hour: u32) -> usize {
    if hour <= MORNING_LAST_HOUR {
        24
    } else {
        48
    }
}

/// Weekly lag in hours.
pub const WEEK: usize = 168;
