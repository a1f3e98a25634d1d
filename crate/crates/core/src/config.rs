//! Run configuration files (TOML) shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{build_dataset, compute_features, generate, Dataset, FeatureConfig, GeneratorConfig};
use crate::metrics::TradeSimConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset read by train/evaluate/predict/inspect (`.agad` binary or CSV text).
    pub dataset: Option<PathBuf>,
    /// Checkpoint read by evaluate/predict/inspect.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Streaming steps timed for the latency percentiles; 0 disables timing.
    pub latency_steps: usize,
    pub latency_warmup: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { latency_steps: 10_000, latency_warmup: 200 }
    }
}

pub struct Synthesized {
    pub dataset: Dataset,
    pub events: usize,
    /// Regime of every generated snapshot, warm-up included.
    pub regimes: Vec<usize>,
}

/// Everything a run needs. Every section is optional; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds the generator, parameter initialization and training.
    pub seed: u64,
    pub generator: GeneratorSection,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub trade: TradeSimConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

/// Generator settings minus the seed, which comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub transition: Vec<Vec<f64>>,
    pub intensity: Vec<f64>,
    pub volatility: Vec<f64>,
    pub interval_ms: f64,
    pub horizon: usize,
    pub tick: f64,
    pub initial_mid: f64,
    pub depth_mean: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            transition: g.transition,
            intensity: g.intensity,
            volatility: g.volatility,
            interval_ms: g.interval_ms,
            horizon: g.horizon,
            tick: g.tick,
            initial_mid: g.initial_mid,
            depth_mean: g.depth_mean,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            generator: GeneratorSection::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            trade: TradeSimConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().trim().to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.dataset, &mut cfg.paths.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot serialize config: {e}")))
    }

    /// Turns on comma-separated ablation flags.
    pub fn apply_ablations(&mut self, list: &str) -> Result<()> {
        for name in list.split(',').filter(|s| !s.trim().is_empty()) {
            self.model.ablations.enable(name)?;
        }
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            transition: g.transition.clone(),
            intensity: g.intensity.clone(),
            volatility: g.volatility.clone(),
            interval_ms: g.interval_ms,
            horizon: g.horizon,
            seed: self.seed,
            tick: g.tick,
            initial_mid: g.initial_mid,
            depth_mean: g.depth_mean,
        }
    }

    /// Generates, featurizes, normalizes and labels a synthetic dataset.
    pub fn synthesize(&self) -> Result<Synthesized> {
        let gen = self.generator_config();
        let data = generate(&gen)?;
        let frames = compute_features(&data.snapshots, self.features.window)?;
        let dataset = build_dataset(&frames, gen.interval_ms, &self.features)?;
        Ok(Synthesized { dataset, events: data.events.len(), regimes: data.regimes })
    }

    pub fn validate(&self) -> Result<()> {
        self.generator_config().validate()?;
        self.train.validate()?;
        self.trade.validate()?;
        if self.features.window == 0 || self.features.zscore_window == 0 {
            return Err(Error::InvalidConfig("feature windows must be positive".into()));
        }
        if !(self.features.label_horizon_ms > 0.0) {
            return Err(Error::InvalidConfig("label_horizon_ms must be positive".into()));
        }
        Ok(())
    }
}
