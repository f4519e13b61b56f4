use std::path::Path;

use anyhow::{bail, Context, Result};
use emg2artic_core::model::{EncoderConfig, LossWeights, CONFIG_VERSION};
use emg2artic_core::signal_prep::PreprocessConfig;
use emg2artic_core::synth_data::SynthConfig;
use emg2artic_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// One JSON file; every section is optional and falls back to defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub config_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_weights: Option<LossWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Electrodes picked by subset selection after a use-only sweep.
    pub subset_k: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            subset_k: emg2artic_core::ablation::DEFAULT_SUBSET_SIZE,
        }
    }
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile {
                config_version: CONFIG_VERSION,
                ..ConfigFile::default()
            });
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ConfigFile =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.config_version != CONFIG_VERSION {
            bail!(
                "config {}: config_version {} is not supported (expected {CONFIG_VERSION})",
                path.display(),
                cfg.config_version
            );
        }
        Ok(cfg)
    }

    pub fn synth(&self) -> SynthConfig {
        self.synth.clone().unwrap_or_default()
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        self.preprocess.clone().unwrap_or_default()
    }

    /// Encoder config with the corpus channel count unless the file fixes it.
    pub fn model(&self, n_channels: usize) -> EncoderConfig {
        self.model.clone().unwrap_or(EncoderConfig {
            n_emg_channels: n_channels,
            ..EncoderConfig::default()
        })
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.loss_weights.unwrap_or_default()
    }

    pub fn train(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(TrainConfig::desk)
    }

    pub fn ablation(&self) -> AblationSection {
        self.ablation.clone().unwrap_or_default()
    }
}
