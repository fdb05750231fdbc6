use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_synthetic, ingest_csv, ColumnMap, HourlyDataset, ScenarioConfig, Segmentation,
};
use crate::error::{Error, Result};
use crate::experts::{ExpertConfig, Family};
use crate::kalman::{AdaptationKind, QGrid};
use crate::viking::VikingParams;
use crate::weather::OrderGrid;

/// Where the hourly data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        /// Overrides of the default header names, keyed by field.
        #[serde(default, skip_serializing_if = "HashMap::is_empty")]
        columns: HashMap<String, String>,
    },
    /// Generated with the config seed.
    Synthetic(ScenarioConfig),
}

/// How an expert's coefficients evolve during the backtest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Frozen offline fit.
    Offline,
    Static,
    StaticBreak,
    Dynamic,
    DynamicBreak,
    DynamicBig,
    Viking,
}

impl Setting {
    pub const ALL: [Setting; 7] = [
        Setting::Offline,
        Setting::Static,
        Setting::StaticBreak,
        Setting::Dynamic,
        Setting::DynamicBreak,
        Setting::DynamicBig,
        Setting::Viking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Offline => "offline",
            Setting::Static => "static",
            Setting::StaticBreak => "static_break",
            Setting::Dynamic => "dynamic",
            Setting::DynamicBreak => "dynamic_break",
            Setting::DynamicBig => "dynamic_big",
            Setting::Viking => "viking",
        }
    }

    /// The Kalman variance setting, for the settings that are one.
    pub fn kalman(self) -> Option<AdaptationKind> {
        match self {
            Setting::Static => Some(AdaptationKind::Static),
            Setting::StaticBreak => Some(AdaptationKind::StaticBreak),
            Setting::Dynamic => Some(AdaptationKind::Dynamic),
            Setting::DynamicBreak => Some(AdaptationKind::DynamicBreak),
            Setting::DynamicBig => Some(AdaptationKind::DynamicBig),
            Setting::Offline | Setting::Viking => None,
        }
    }

    /// Whether forecasts come with a predictive variance.
    pub fn probabilistic(self) -> bool {
        self != Setting::Offline
    }
}

fn no_correction() -> Vec<bool> {
    vec![false]
}

/// A block of the roster: every combination of the listed options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub families: Vec<Family>,
    pub settings: Vec<Setting>,
    /// With and/or without intraday correction.
    #[serde(default = "no_correction")]
    pub intraday: Vec<bool>,
    /// Gaussian quantile levels added next to the point forecast.
    #[serde(default)]
    pub quantiles: Vec<f64>,
}

/// One expert entering the aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub family: Family,
    pub setting: Setting,
    pub intraday: bool,
    pub quantile: Option<f64>,
}

impl ExpertSpec {
    /// Names like `GAM`, `Lin_dynamicbig`, `MLP_dynamic90`, `GAM_staticbreak_corr`.
    pub fn name(&self) -> String {
        let mut s = self.family.name().to_string();
        if self.setting != Setting::Offline {
            s.push('_');
            s.push_str(&self.setting.name().replace('_', ""));
        }
        if let Some(q) = self.quantile {
            // percent, e.g. 0.9 -> 90, 0.975 -> 97.5
            let pct = (q * 1e6).round() / 1e4;
            s.push_str(&pct.to_string());
        }
        if self.intraday {
            s.push_str("_corr");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanOptions {
    pub grid: QGrid,
    /// Length of the recent window on which the big setting picks `q`.
    pub big_window_days: i64,
}

impl Default for KalmanOptions {
    fn default() -> Self {
        Self {
            grid: QGrid::default(),
            big_window_days: 182,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherOptions {
    /// Replace raw weather forecasts by their statistical correction.
    pub correct: bool,
    pub grid: OrderGrid,
}

impl Default for WeatherOptions {
    fn default() -> Self {
        Self {
            correct: true,
            grid: OrderGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationOptions {
    pub enabled: bool,
    /// Names of the aggregated experts; all of them when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experts: Option<Vec<String>>,
}

impl Default for AggregationOptions {
    fn default() -> Self {
        Self {
            enabled: true,
            experts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntradayOptions {
    /// Rows per hour before a correction is fitted.
    pub min_rows: usize,
}

impl Default for IntradayOptions {
    fn default() -> Self {
        Self { min_rows: 50 }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("report")
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSource,
    pub segmentation: Segmentation,
    #[serde(default)]
    pub roster: Vec<RosterEntry>,
    #[serde(default)]
    pub experts: ExpertConfig,
    #[serde(default)]
    pub kalman: KalmanOptions,
    #[serde(default)]
    pub viking: VikingParams,
    /// Break time of the break settings.
    #[serde(default)]
    pub break_at: Option<NaiveDateTime>,
    #[serde(default)]
    pub weather: WeatherOptions,
    #[serde(default)]
    pub intraday: IntradayOptions,
    #[serde(default)]
    pub aggregation: AggregationOptions,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    /// Reads a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        if let DataSource::Csv { path, .. } = &mut self.data {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
        if self.output_dir.is_relative() {
            self.output_dir = dir.join(&self.output_dir);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Expands the roster blocks, dropping repeated experts.
    pub fn experts(&self) -> Vec<ExpertSpec> {
        let mut out: Vec<ExpertSpec> = Vec::new();
        for e in &self.roster {
            for &family in &e.families {
                for &setting in &e.settings {
                    for &intraday in &e.intraday {
                        let levels =
                            std::iter::once(None).chain(e.quantiles.iter().map(|&q| Some(q)));
                        for quantile in levels {
                            let spec = ExpertSpec {
                                family,
                                setting,
                                intraday,
                                quantile,
                            };
                            if !out.iter().any(|s| s.name() == spec.name()) {
                                out.push(spec);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.viking.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.kalman.grid.min_exp > self.kalman.grid.max_exp {
            return bad("kalman grid: min_exp exceeds max_exp".into());
        }
        if self.kalman.big_window_days <= 0 {
            return bad("kalman big_window_days must be positive".into());
        }
        let experts = self.experts();
        for e in &self.roster {
            if e.families.is_empty() || e.settings.is_empty() || e.intraday.is_empty() {
                return bad(
                    "roster entries need at least one family, setting and intraday flag".into(),
                );
            }
        }
        for spec in &experts {
            if let Some(q) = spec.quantile {
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::InvalidLevel(q));
                }
                if !spec.setting.probabilistic() {
                    return bad(format!(
                        "{}: quantiles need a state-space setting",
                        spec.name()
                    ));
                }
            }
            let needs_break = spec
                .setting
                .kalman()
                .is_some_and(AdaptationKind::needs_break);
            if needs_break && self.break_at.is_none() {
                return bad(format!("{} needs break_at", spec.name()));
            }
        }
        if let Some(names) = &self.aggregation.experts {
            for n in names {
                if !experts.iter().any(|s| &s.name() == n) {
                    return bad(format!("aggregation names unknown expert `{n}`"));
                }
            }
        }
        Ok(())
    }

    /// Loads or generates the dataset.
    pub fn dataset(&self) -> Result<HourlyDataset> {
        match &self.data {
            DataSource::Csv { path, columns } => {
                let mut map = ColumnMap::default();
                for (field, header) in columns {
                    map = map.with(field, header);
                }
                ingest_csv(path, &map).map_err(|e| e.context(format!("reading {}", path.display())))
            }
            DataSource::Synthetic(scenario) => gen_synthetic(scenario, self.seed),
        }
    }
}
