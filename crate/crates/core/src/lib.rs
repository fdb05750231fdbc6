//! Day-ahead electricity load forecasting.
//!
//! The crate is organised around the forecasting pipeline:
//!
//! - [`data`]: hourly records, CSV ingestion, calendar and lag features,
//!   the 8AM availability rule and a synthetic scenario generator.
//! - [`weather`]: statistical correction of raw weather forecasts.
//! - [`experts`]: per-hour base forecasters (autoregressive, linear,
//!   spline additive, MLP) and their adaptation feature maps.
//! - [`kalman`] and [`viking`]: state-space adaptation of any expert,
//!   with fixed or variationally tracked variances.
//! - [`intraday`]: residual autoregression on the most recent hours.
//! - [`aggregation`]: ML-Poly online aggregation and greedy expert selection.
//! - [`pipeline`]: configuration-driven backtest and report files.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod experts;
pub mod intraday;
pub mod kalman;
pub mod linalg;
pub mod pipeline;
pub mod viking;
pub mod weather;

pub use error::{Error, Result};
