//! The JSON run configuration shared by `train`, `eval`, `analyze` and `loocv`.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "data": "runs/synth.umsd",
//!   "window_seconds": 1.5,
//!   "holdout_user": "u6",
//!   "output_dir": "runs/u6",
//!   "model": { "variant": "A", "single_widths": [8, 8, 16, 16], "model_dim": 16, "num_heads": 2 },
//!   "train": { "epochs": 8, "batch_size": 32, "learning_rate": 0.003 }
//! }
//! ```
//!
//! Every key is optional except `schema_version`; unknown keys are rejected.
//! Command-line flags take precedence over the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use umsnet::lsr::{BlockOptions, STAGES};
use umsnet::model::{DatasetProfile, ModelConfig, StageDims, Variant};
use umsnet::training::TrainConfig;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub window_seconds: Option<f64>,
    /// Hop between windows when slicing raw recordings.
    #[serde(default)]
    pub stride_seconds: Option<f64>,
    #[serde(default)]
    pub holdout_user: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Changes applied on top of a variant preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub variant: Option<Variant>,
    /// Stage depths; required with the custom variant, rejected otherwise.
    pub depths: Option<[usize; STAGES]>,
    pub transformer_depth: Option<usize>,
    pub single_widths: Option<[usize; STAGES]>,
    pub multi_widths: Option<[usize; STAGES]>,
    pub model_dim: Option<usize>,
    pub num_heads: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub dropout: Option<f64>,
    pub block: Option<BlockOptions>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| umsnet::Error::Config(format!("run config: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(umsnet::Error::Config(format!(
                    "run config schema_version {v} is not supported (expected {SCHEMA_VERSION})"
                ))
                .into())
            }
            None => return Err(umsnet::Error::Config("run config lacks a numeric schema_version".into()).into()),
        }
        serde_json::from_value(value).map_err(|e| umsnet::Error::Config(format!("run config: {e}")).into())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| umsnet::Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::new()), Self::load)
    }
}

impl ModelOverrides {
    /// Resolves the model for a dataset profile and slice count. `variant`
    /// overrides the file; A is the fallback.
    pub fn build(
        &self,
        variant: Option<Variant>,
        profile: &DatasetProfile,
        slices: usize,
    ) -> Result<ModelConfig, CliError> {
        let variant = variant.or(self.variant).unwrap_or(Variant::A);
        let mut cfg = match variant.depths() {
            Some(_) if self.depths.is_some() || self.transformer_depth.is_some() => {
                return Err(umsnet::Error::Config(format!(
                    "depths are fixed by variant {variant}; use the custom variant to set them"
                ))
                .into())
            }
            Some(_) => ModelConfig::preset(variant, profile, slices)?,
            None => {
                let (Some(depths), Some(transformer_depth)) = (self.depths, self.transformer_depth) else {
                    return Err(
                        umsnet::Error::Config("the custom variant needs depths and transformer_depth".into()).into(),
                    );
                };
                let mut cfg = ModelConfig::preset(Variant::A, profile, slices)?;
                cfg.variant = Variant::Custom;
                cfg.single_stage = StageDims {
                    depths,
                    ..cfg.single_stage
                };
                cfg.multi_stage = StageDims {
                    depths,
                    ..cfg.multi_stage
                };
                cfg.transformer_depth = transformer_depth;
                cfg
            }
        };
        if let Some(w) = self.single_widths {
            cfg.single_stage.widths = w;
        }
        if let Some(w) = self.multi_widths {
            cfg.multi_stage.widths = w;
        }
        cfg.model_dim = self.model_dim.unwrap_or(cfg.model_dim);
        cfg.num_heads = self.num_heads.unwrap_or(cfg.num_heads);
        cfg.mlp_ratio = self.mlp_ratio.unwrap_or(cfg.mlp_ratio);
        cfg.dropout = self.dropout.unwrap_or(cfg.dropout);
        cfg.block = self.block.unwrap_or(cfg.block);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_parses() {
        let cfg = RunConfig::from_json(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(cfg, RunConfig::new());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"schema_version": 1, "epochs": 3}"#).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let err = RunConfig::from_json(r#"{"schema_version": 1, "train": {"epoch": 3}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn schema_version_is_checked() {
        assert!(RunConfig::from_json(r#"{"schema_version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{}"#).is_err());
    }

    #[test]
    fn custom_variant_needs_depths() {
        let profile = DatasetProfile::hhar(8);
        let mut m = ModelOverrides::default();
        assert!(m.build(Some(Variant::Custom), &profile, 6).is_err());
        m.depths = Some([1, 1, 1, 1]);
        m.transformer_depth = Some(1);
        let cfg = m.build(Some(Variant::Custom), &profile, 6).unwrap();
        assert_eq!(cfg.single_stage.depths, [1, 1, 1, 1]);
        assert!(m.build(Some(Variant::B), &profile, 6).is_err());
    }
}
