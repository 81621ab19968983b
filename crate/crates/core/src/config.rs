//! The single configuration file shared by every subcommand (TOML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::dataset::DEFAULT_FOREGROUND_THRESHOLD;
use crate::encoder::EncoderConfig;
use crate::metrics::MetricConfig;
use crate::retrieval::RetrievalConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("[{section}] {message}")]
    Invalid { section: &'static str, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub foreground_threshold: f32,
    /// Fraction of models held out of training by `prepare --split`.
    pub fraction_unseen: f64,
    pub synthetic_models: usize,
    pub synthetic_instances_per_model: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            foreground_threshold: DEFAULT_FOREGROUND_THRESHOLD,
            fraction_unseen: 0.0,
            synthetic_models: 16,
            synthetic_instances_per_model: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub max_k: usize,
    pub max_upload_bytes: usize,
    /// Recent query results kept for re-fetch.
    pub cache_capacity: usize,
    /// Directory of static UI assets, served at `/` when set.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_k: 500,
            max_upload_bytes: 16 * 1024 * 1024,
            cache_capacity: 256,
            static_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: DatasetSection,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub training: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub metrics: MetricConfig,
    pub service: ServiceSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let mut c = Self {
            dataset: DatasetSection::default(),
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::default(),
            training: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            metrics: MetricConfig::default(),
            service: ServiceSection::default(),
        };
        c.training.augment = c.augment.clone();
        c
    }
}

impl ConfigFile {
    /// Parses a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parse_err = |message: String| ConfigError::Parse { path: path.to_path_buf(), message };
        let mut config: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        config.training.augment = config.augment.clone();
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section: &'static str| move |e: &dyn std::fmt::Display| ConfigError::Invalid { section, message: e.to_string() };
        if !(0.0..1.0).contains(&self.dataset.foreground_threshold) {
            return Err(invalid("dataset")(&"foreground_threshold must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dataset.fraction_unseen) {
            return Err(invalid("dataset")(&"fraction_unseen must lie in [0, 1)"));
        }
        if self.dataset.synthetic_models < 2 || self.dataset.synthetic_instances_per_model < 2 {
            return Err(invalid("dataset")(&"synthetic sets need at least 2 models and 2 instances per model"));
        }
        self.augment.validate().map_err(|e| invalid("augment")(&e))?;
        self.encoder.validate().map_err(|e| invalid("encoder")(&e))?;
        self.training.validate().map_err(|e| invalid("training")(&e))?;
        if self.retrieval.k == 0 {
            return Err(invalid("retrieval")(&"k must be at least 1"));
        }
        self.metrics.validate().map_err(|e| invalid("metrics")(&e))?;
        if self.service.max_k == 0 || self.service.cache_capacity == 0 {
            return Err(invalid("service")(&"max_k and cache_capacity must be positive"));
        }
        Ok(())
    }
}
