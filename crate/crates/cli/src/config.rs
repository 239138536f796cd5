//! The configuration file shared by every subcommand.
//!
//! One TOML or JSON document with optional `[scene]`, `[pipeline]`,
//! `[ransac]` and `[grid]` tables; anything left out takes its default.
//! Command-line flags are applied on top.

use std::path::Path;

use anyhow::{bail, Context};
use epicert_core::{ExperimentGrid, PipelineConfig, RansacConfig, SceneConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    pub ransac: RansacConfig,
    /// Used by `benchmark`; its own `pipeline` table configures every trial.
    pub grid: ExperimentGrid,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display())),
            Some("toml") | None => {
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
            }
            Some(other) => bail!("unsupported config extension {other:?} (use .toml or .json)"),
        }
    }
}
