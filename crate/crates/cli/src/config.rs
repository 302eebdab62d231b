use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use ccrnn::ccgru::ModelConfig;
use ccrnn::geo::Rectangle;
use ccrnn::ingest::{weeks_to_bins, CsvSchema, DEFAULT_CLUSTER_SAMPLE, DEFAULT_DC_QUANTILE};
use ccrnn::train_eval::{AblationVariant, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_PATIENCE, DEFAULT_SAMPLING_DECAY};

/// A problem with the run configuration or input schema (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

pub const CONFIG_TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationMode {
    DockBased,
    Virtual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub trips: Vec<PathBuf>,
    pub columns: CsvSchema,
    pub region: Option<Rectangle>,
    pub bin_minutes: i64,
    /// First bin start; defaults to midnight of the first trip's day.
    pub start: Option<String>,
    /// Exclusive end of the last bin; defaults to covering the last trip.
    pub end: Option<String>,
    pub val_weeks: usize,
    pub test_weeks: usize,
    /// Exact held-out sizes in bins; override the week counts.
    pub val_bins: Option<usize>,
    pub test_bins: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            trips: Vec::new(),
            columns: CsvSchema::default(),
            region: None,
            bin_minutes: 30,
            start: None,
            end: None,
            val_weeks: 2,
            test_weeks: 2,
            val_bins: None,
            test_bins: None,
        }
    }
}

impl DataConfig {
    pub fn val_bins(&self) -> usize {
        self.val_bins.unwrap_or_else(|| weeks_to_bins(self.val_weeks, self.bin_minutes))
    }

    pub fn test_bins(&self) -> usize {
        self.test_bins.unwrap_or_else(|| weeks_to_bins(self.test_weeks, self.bin_minutes))
    }

    pub fn parse_time(raw: &Option<String>) -> Result<Option<NaiveDateTime>, ConfigError> {
        raw.as_deref()
            .map(|s| NaiveDateTime::parse_from_str(s, CONFIG_TIME_FORMAT).map_err(|e| ConfigError(format!("time `{s}`: {e}"))))
            .transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationConfig {
    pub mode: StationMode,
    /// Docks kept in dock-based mode.
    pub keep: usize,
    /// Virtual stations discovered in virtual mode.
    pub num_stations: usize,
    pub dc_quantile: f64,
    pub sample_size: usize,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            mode: StationMode::Virtual,
            keep: 250,
            num_stations: 266,
            dc_quantile: DEFAULT_DC_QUANTILE,
            sample_size: DEFAULT_CLUSTER_SAMPLE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub history: usize,
    pub horizon: usize,
    /// Singular vectors kept for station representations.
    pub xi: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub diffusion_steps: usize,
    pub hidden_dim: usize,
    /// Gaussian kernel width; defaults to the pairwise-distance std.
    pub epsilon: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { history: 12, horizon: 12, xi: 20, embed_dim: 50, layers: 3, diffusion_steps: 3, hidden_dim: 25, epsilon: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sampling_decay: f64,
    pub patience: usize,
    pub variant: AblationVariant,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 100,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            sampling_decay: DEFAULT_SAMPLING_DECAY,
            patience: DEFAULT_PATIENCE,
            variant: AblationVariant::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub variants: Vec<AblationVariant>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { variants: AblationVariant::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    pub stations: StationConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub ablation: AblationSection,
}

/// Flag values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<AblationVariant>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    /// Reads a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.data.trips.iter_mut().chain(cfg.output.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output = Some(out.clone());
        }
        if let Some(v) = o.variant {
            self.train.variant = v;
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("ccrnn-out"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        for (name, v) in [
            ("model.history", m.history),
            ("model.horizon", m.horizon),
            ("model.xi", m.xi),
            ("model.embed_dim", m.embed_dim),
            ("model.layers", m.layers),
            ("model.diffusion_steps", m.diffusion_steps),
            ("model.hidden_dim", m.hidden_dim),
            ("stations.keep", self.stations.keep),
            ("stations.num_stations", self.stations.num_stations),
            ("stations.sample_size", self.stations.sample_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if let Some(eps) = m.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad(format!("model.epsilon must be positive, got {eps}"));
            }
        }
        if self.data.bin_minutes <= 0 {
            return bad("data.bin_minutes must be positive");
        }
        if !(self.stations.dc_quantile > 0.0 && self.stations.dc_quantile < 1.0) {
            return bad("stations.dc_quantile must lie in (0, 1)");
        }
        DataConfig::parse_time(&self.data.start)?;
        DataConfig::parse_time(&self.data.end)?;
        self.train_config().validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        if self.ablation.variants.is_empty() {
            return bad("ablation.variants is empty");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            sampling_decay: t.sampling_decay,
            patience: t.patience,
            variant: t.variant,
        }
    }

    pub fn model_config(&self, num_nodes: usize, channels: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            num_nodes,
            channels,
            hidden_dim: m.hidden_dim,
            embed_dim: m.embed_dim,
            layers: m.layers,
            diffusion_steps: m.diffusion_steps,
            horizon: m.horizon,
            layer_graph: self.train.variant.layer_graph(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
