//! Fully resolved settings of each subcommand. A `--config` JSON file
//! supplies any subset of these fields; flags are applied on top and the
//! result is echoed to `resolved_config.json` in the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use dflow_core::baselines::{BaselineMethod, ThresholdParams};
use dflow_core::data::synth::{SplitCounts, SynthSceneParams, DEFAULT_SEQUENCE_LEN};
use dflow_core::data::{Downsample, Split};
use dflow_core::{DFlowConfig, LossKind, Preset, TrainConfig, UnitHyperparams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub fn load<S: DeserializeOwned + Default>(path: Option<&Path>) -> Result<S, Failure> {
    let Some(path) = path else {
        return Ok(S::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub scene: SynthSceneParams,
    pub counts: SplitCounts,
    pub len: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            scene: SynthSceneParams::default(),
            counts: SplitCounts::default(),
            len: DEFAULT_SEQUENCE_LEN,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub dataset: Option<PathBuf>,
    pub downsample: Option<Downsample>,
    pub model: DFlowConfig,
    /// Seed of the parameter initialisation.
    pub model_seed: u64,
    pub train: TrainConfig,
    /// Checkpoint to resume from.
    pub resume: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            downsample: None,
            model: DFlowConfig::preset(Preset::Small),
            model_seed: 0,
            train: TrainConfig::default(),
            resume: None,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSettings {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub downsample: Option<Downsample>,
    pub split: Option<Split>,
    pub source: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub downsample: Option<Downsample>,
    pub split: Split,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            checkpoint: None,
            downsample: None,
            split: Split::Test,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub dataset: Option<PathBuf>,
    pub method: BaselineMethod,
    pub params: ThresholdParams,
    pub split: Option<Split>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            method: BaselineMethod::Mean,
            params: ThresholdParams::default(),
            split: None,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSettings {
    pub hyperparams: UnitHyperparams,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub model: DFlowConfig,
    pub size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub tolerance: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            model: DFlowConfig {
                channels: 2,
                k: 2,
                ..DFlowConfig::preset(Preset::Small)
            },
            size: 6,
            seed: 0,
            loss: LossKind::Bce,
            tolerance: 1e-4,
        }
    }
}
