use serde::{Deserialize, Serialize};

use super::backtest::simulate;
use super::config::PipelineConfig;
use crate::aggregation::{greedy_select, SelectionData};
use crate::error::{Error, Result};

/// Greedy expert selection on the validation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Expert names in the order they were added.
    pub order: Vec<String>,
    /// Validation MAE of the aggregation after each addition.
    pub curve: Vec<f64>,
}

/// Backtests every roster expert, then selects greedily. Weights learn from
/// the aggregation start; only the validation window is scored.
pub fn select(cfg: &PipelineConfig, max_size: usize) -> Result<SelectionReport> {
    let ds = cfg.dataset()?;
    let bt = simulate(cfg, &ds)?;
    if bt.names.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let seg = &cfg.segmentation;
    let rows: Vec<usize> = (0..bt.timestamps.len())
        .filter(|&t| {
            let ts = bt.timestamps[t];
            ts >= seg.aggregation_start
                && ts < seg.validation.end
                && bt.actuals[t].is_some()
                && bt.forecasts.iter().all(|f| f[t].is_some())
        })
        .collect();
    let forecasts: Vec<Vec<f64>> = bt
        .forecasts
        .iter()
        .map(|f| rows.iter().map(|&t| f[t].unwrap()).collect())
        .collect();
    let targets: Vec<f64> = rows.iter().map(|&t| bt.actuals[t].unwrap()).collect();
    let hours: Vec<u32> = rows
        .iter()
        .map(|&t| chrono::Timelike::hour(&bt.timestamps[t]))
        .collect();
    let score_from = rows
        .iter()
        .position(|&t| bt.timestamps[t] >= seg.validation.start)
        .unwrap_or(rows.len());
    let data = SelectionData {
        forecasts: &forecasts,
        targets: &targets,
        hours: &hours,
        score_from,
    };
    let sel = greedy_select(data, max_size)?;
    Ok(SelectionReport {
        order: sel.order.iter().map(|&k| bt.names[k].clone()).collect(),
        curve: sel.curve,
    })
}
