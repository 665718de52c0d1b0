//! Experiment configuration: one JSON document covering the model, the
//! training protocol, the synthetic data generator and the evaluation
//! protocol, plus one master seed.
//!
//! The master seed drives everything: the effective data/train/init seeds
//! are derived from it, so a run is fully determined by (config file, --seed)
//! and the seed fields inside the sub-sections are overwritten in the
//! effective config that gets written next to the outputs.

use anyhow::{bail, Context, Result};
use gltr::eval::EvalProtocol;
use gltr::network::ModelConfig;
use gltr::rng::SplitMix64;
use gltr::synth::BenchmarkConfig;
use gltr::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataFiles {
    pub train: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; all other seeds are derived from it.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: BenchmarkConfig,
    pub eval: EvalProtocol,
    /// Pre-extracted feature files; when set they take precedence over the
    /// synthetic generator.
    pub data_files: DataFiles,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // Desk-scale defaults: the model width follows the generator.
        let data = BenchmarkConfig::default();
        let model = ModelConfig { frame_dim: data.frame_dim, ..ModelConfig::default() };
        Self {
            seed: 0,
            model,
            train: TrainConfig::default(),
            data,
            eval: EvalProtocol::default(),
            data_files: DataFiles::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Resolve the effective configuration: apply the CLI seed override and
    /// derive the per-component seeds from the master seed.
    pub fn resolve(mut self, cli_seed: Option<u64>) -> Self {
        if let Some(seed) = cli_seed {
            self.seed = seed;
        }
        self.data.seed = SplitMix64::fork(self.seed, 1).next_u64();
        self.train.seed = SplitMix64::fork(self.seed, 2).next_u64();
        self
    }

    /// Seed for network parameter initialization.
    pub fn net_seed(&self) -> u64 {
        SplitMix64::fork(self.seed, 3).next_u64()
    }

    /// Checks that cut across sections (the per-section validate calls run
    /// where the sections are used).
    pub fn validate(&self) -> Result<()> {
        if self.data_files.train.is_none() && self.model.frame_dim != self.data.frame_dim {
            bail!(
                "model.frame_dim ({}) and data.frame_dim ({}) disagree; \
                 they must match when features come from the generator",
                self.model.frame_dim,
                self.data.frame_dim
            );
        }
        if self.eval.cross_camera_only && self.data_files.query.is_none() && self.data.cameras < 2
        {
            bail!("cross-camera evaluation needs at least 2 cameras");
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

/// Copy the input config verbatim into the run directory (or serialize the
/// effective one when no file was given), and always record the effective
/// config next to it.
pub fn record_configs(
    out_dir: &Path,
    input_config: Option<&Path>,
    effective: &ExperimentConfig,
) -> Result<()> {
    match input_config {
        Some(path) => {
            std::fs::copy(path, out_dir.join("config.json"))
                .with_context(|| format!("copying {} into the run directory", path.display()))?;
        }
        None => {
            std::fs::write(out_dir.join("config.json"), effective.to_pretty_json())?;
        }
    }
    std::fs::write(out_dir.join("effective.json"), effective.to_pretty_json())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_in_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 5, "data": {"num_identities": 8}}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.data.num_identities, 8);
        assert_eq!(cfg.data.cameras, 2);
        assert_eq!(cfg.train.clip_length, 16);
        assert_eq!(cfg.model.kernel_width, 3);
    }

    #[test]
    fn resolve_derives_subsystem_seeds() {
        let a = ExperimentConfig::default().resolve(Some(7));
        let b = ExperimentConfig::default().resolve(Some(7));
        assert_eq!(a.data.seed, b.data.seed);
        assert_eq!(a.train.seed, b.train.seed);
        assert_eq!(a.net_seed(), b.net_seed());
        let c = ExperimentConfig::default().resolve(Some(8));
        assert_ne!(a.data.seed, c.data.seed);
    }

    #[test]
    fn frame_dim_mismatch_is_caught() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.frame_dim = 99;
        assert!(cfg.validate().is_err());
    }
}
