//! Run configuration: a strict JSON schema validated before any compute.

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Result, SmpError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    #[serde(rename = "L")]
    pub num_layers: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub num_patches: usize,
    pub ffn: usize,
    /// Adapter rank.
    pub r: usize,
}

impl BackboneSection {
    pub fn to_backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            num_layers: self.num_layers,
            embed_dim: self.d,
            num_patches: self.num_patches,
            ffn_hidden: self.ffn,
            key_dim: self.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub base_classes: usize,
    pub n_way: usize,
    pub k_shot: usize,
    /// Number of incremental sessions after the base task.
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Cosine logit scale.
    pub s: f64,
    /// Margin for the discriminative loss and for calibration.
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpccSection {
    pub enabled: bool,
    pub per_class: usize,
    pub iters: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherSection {
    /// Max number of base samples used for the Fisher estimate.
    pub subsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backbone: BackboneSection,
    pub stream: StreamSection,
    pub train: TrainSection,
    pub mpcc: MpccSection,
    pub fisher: FisherSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.to_backbone_config().validate()?;
        if self.backbone.r == 0 || self.backbone.r >= self.backbone.d {
            return Err(SmpError::Config(format!(
                "adapter rank {} must be in 1..{}",
                self.backbone.r, self.backbone.d
            )));
        }
        let st = &self.stream;
        if st.base_classes < 2 || st.n_way == 0 || st.k_shot == 0 {
            return Err(SmpError::Config("stream counts must be positive (base >= 2)".into()));
        }
        let tr = &self.train;
        if tr.epochs == 0 || tr.batch == 0 || tr.lr <= 0.0 || tr.s <= 0.0 || tr.m < 0.0 {
            return Err(SmpError::Config("train section out of range".into()));
        }
        if self.mpcc.per_class == 0 || self.mpcc.lr < 0.0 {
            return Err(SmpError::Config("mpcc section out of range".into()));
        }
        if self.fisher.subsample == 0 {
            return Err(SmpError::Config("fisher.subsample must be >= 1".into()));
        }
        Ok(())
    }

    /// Defaults at desk scale; the loss scale, margin, epochs, and learning
    /// rates are the full-scale training values.
    pub fn desk_default(seed: u64) -> Self {
        RunConfig {
            seed,
            backbone: BackboneSection { num_layers: 2, d: 32, num_patches: 16, ffn: 64, r: 4 },
            stream: StreamSection { base_classes: 20, n_way: 5, k_shot: 5, sessions: 4 },
            train: TrainSection { epochs: 20, lr: 0.01, batch: 16, s: 16.0, m: 0.2 },
            mpcc: MpccSection { enabled: true, per_class: 64, iters: 30, lr: 0.001 },
            fisher: FisherSection { subsample: 128 },
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(json)
            .map_err(|e| SmpError::Config(format!("run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

/// File locations used by the command-line driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub fixture: String,
    pub checkpoint_dir: String,
    pub report_out: String,
}

/// Parse a config file that carries the run schema plus a `paths` object.
pub fn parse_config_with_paths(json: &str) -> Result<(RunConfig, PathsSection)> {
    let mut value: serde_json::Value = serde_json::from_str(json)
        .map_err(|e| SmpError::Config(format!("config file: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| SmpError::Config("config file is not a JSON object".into()))?;
    let paths_value = obj
        .remove("paths")
        .ok_or_else(|| SmpError::Config("config file missing \"paths\"".into()))?;
    let paths: PathsSection = serde_json::from_value(paths_value)
        .map_err(|e| SmpError::Config(format!("paths: {e}")))?;
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| SmpError::Config(format!("run config: {e}")))?;
    config.validate()?;
    Ok((config, paths))
}
