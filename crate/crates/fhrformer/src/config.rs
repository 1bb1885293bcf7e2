//! Run configuration: preset defaults, an optional TOML file on top, then
//! command-line overrides. The resolved configuration is written next to
//! every run's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fhrformer_core::apps::{ForecastConfig, SplitRatios, SyntheticSpec};
use fhrformer_core::loss::LossConfig;
use fhrformer_core::trainer::TrainConfig;
use fhrformer_core::ModelConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub patch_size: usize,
    pub signal_length: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub mask_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub baseline: (f64, f64),
    pub drift_amplitude: f64,
    pub drift_period: (f64, f64),
    pub variability: f64,
    pub variability_period: (f64, f64),
    pub variability_components: usize,
    pub jitter: f64,
    pub decel_rate: f64,
    pub decel_depth: (f64, f64),
    pub decel_duration: (f64, f64),
    pub dropout_rate: f64,
    pub dropout_duration: (usize, usize),
    pub length: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSection {
    pub context_len: usize,
    pub step: usize,
    pub horizon: usize,
    pub passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub split: SplitSection,
    pub forecast: ForecastSection,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (m, t, f) = match preset {
            Preset::Toy => (ModelConfig::toy(), TrainConfig::toy(), ForecastConfig::toy()),
            Preset::Paper => (ModelConfig::paper(), TrainConfig::paper(), ForecastConfig::paper()),
        };
        let s = SyntheticSpec::default();
        let length = match preset {
            Preset::Toy => s.length,
            // hour-long records, some shorter than the window so they get padded
            Preset::Paper => (6600, 7800),
        };
        let r = SplitRatios::default();
        RunConfig {
            preset,
            seed: t.seed,
            model: ModelSection {
                patch_size: m.patch_size,
                signal_length: m.signal_length,
                d_model: m.d_model,
                ffn_dim: m.ffn_dim,
                encoder_layers: m.encoder_layers,
                decoder_layers: m.decoder_layers,
                heads: m.heads,
                dropout: m.dropout,
                mask_ratio: m.mask_ratio,
            },
            train: TrainSection {
                batch_size: t.batch_size,
                learning_rate: t.learning_rate,
                weight_decay: t.weight_decay,
                max_epochs: t.max_epochs,
                early_stop_patience: t.early_stop_patience,
                scheduler_patience: t.scheduler_patience,
                scheduler_factor: t.scheduler_factor,
                alpha: t.loss.alpha,
                beta: t.loss.beta,
            },
            synth: SynthSection {
                count: 600,
                baseline: s.baseline,
                drift_amplitude: s.drift_amplitude,
                drift_period: s.drift_period,
                variability: s.variability,
                variability_period: s.variability_period,
                variability_components: s.variability_components,
                jitter: s.jitter,
                decel_rate: s.decel_rate,
                decel_depth: s.decel_depth,
                decel_duration: s.decel_duration,
                dropout_rate: s.dropout_rate,
                dropout_duration: s.dropout_duration,
                length,
            },
            split: SplitSection { train: r.train, validation: r.validation, test: r.test },
            forecast: ForecastSection { context_len: f.context_len, step: f.step, horizon: f.horizon, passes: 50 },
        }
    }

    /// Preset defaults with `overlay` (a possibly partial TOML document)
    /// merged on top. Unknown keys are errors.
    pub fn from_toml(preset: Preset, overlay: &str) -> Result<Self> {
        let over: toml::Table = overlay.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let preset = match over.get("preset") {
            Some(v) => Preset::deserialize(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            None => preset,
        };
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| CliError::Config(e.to_string()))?;
        let merged = merge(base, over);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(preset, &text)
            }
            None => Ok(Self::preset(preset)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.synth_spec().validate()?;
        let r = &self.split;
        if ![r.train, r.validation, r.test].iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(CliError::Config(format!("split weights must be positive, got {}:{}:{}", r.train, r.validation, r.test)));
        }
        if self.forecast.passes < 2 {
            return Err(CliError::Config(format!("forecast.passes must be at least 2, got {}", self.forecast.passes)));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            patch_size: m.patch_size,
            signal_length: m.signal_length,
            d_model: m.d_model,
            ffn_dim: m.ffn_dim,
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            heads: m.heads,
            dropout: m.dropout,
            mask_ratio: m.mask_ratio,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            scheduler_patience: t.scheduler_patience,
            scheduler_factor: t.scheduler_factor,
            seed: self.seed,
            mask_ratio: self.model.mask_ratio,
            loss: LossConfig { alpha: t.alpha, beta: t.beta },
        }
    }

    pub fn synth_spec(&self) -> SyntheticSpec {
        let s = &self.synth;
        SyntheticSpec {
            baseline: s.baseline,
            drift_amplitude: s.drift_amplitude,
            drift_period: s.drift_period,
            variability: s.variability,
            variability_period: s.variability_period,
            variability_components: s.variability_components,
            jitter: s.jitter,
            decel_rate: s.decel_rate,
            decel_depth: s.decel_depth,
            decel_duration: s.decel_duration,
            dropout_rate: s.dropout_rate,
            dropout_duration: s.dropout_duration,
            length: s.length,
            seed: self.seed,
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios { train: self.split.train, validation: self.split.validation, test: self.split.test }
    }

    pub fn forecast_config(&self) -> ForecastConfig {
        ForecastConfig { context_len: self.forecast.context_len, step: self.forecast.step, horizon: self.forecast.horizon }
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge(std::mem::take(b), o);
                *b = merged;
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
