//! Pipeline configuration, read from TOML and overridden by CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::MelConfig;
use crate::corpus::CorpusKind;
use crate::eval::CrossvalConfig;

pub const SEED_ENV: &str = "MOODPIPE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub root: PathBuf,
    pub kind: CorpusKind,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { root: PathBuf::from("corpus"), kind: CorpusKind::ThreeResponse }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub output: PathBuf,
    pub mel: MelConfig,
    pub crossval: CrossvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: CorpusConfig::default(),
            output: PathBuf::from("out"),
            mel: MelConfig::default(),
            crossval: CrossvalConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    /// Defaults with the seed taken from `MOODPIPE_SEED` when set.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut config = PipelineConfig::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            config.crossval.seed = v.trim().parse().map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        self.mel.validate().map_err(invalid)?;
        let cv = &self.crossval;
        if cv.k < 2 {
            return Err(invalid(format!("crossval.k = {}; need at least 2", cv.k)));
        }
        cv.train.validate().map_err(|e| invalid(format!("crossval.train: {e}")))?;
        cv.fusion_train.validate().map_err(|e| invalid(format!("crossval.fusion_train: {e}")))?;
        if cv.audio.mel_bins != self.mel.n_mels {
            return Err(invalid(format!("audio.mel_bins = {} but mel.n_mels = {}", cv.audio.mel_bins, self.mel.n_mels)));
        }
        for (name, p) in [("text", cv.text.dropout), ("audio", cv.audio.dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(invalid(format!("{name}.dropout = {p} must lie in [0, 1)")));
            }
        }
        if cv.text.hidden == 0 || cv.text.layers == 0 || cv.audio.hidden == 0 || cv.audio.layers == 0 || cv.audio.clusters == 0 {
            return Err(invalid("model sizes must be positive".into()));
        }
        Ok(())
    }
}
