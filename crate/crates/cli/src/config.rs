//! Experiment configuration: a TOML file whose values any command-line flag
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxsep::augment::AugmentKind;
use voxsep::evaluation::EvalConfig;
use voxsep::model::{TrainConfig, UNetConfig};
use voxsep::SeparationMode;

use crate::failure::{usage, CmdResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub kinds: Option<Vec<String>>,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub depth: Option<usize>,
    pub base_channels: Option<usize>,
    pub frames: Option<usize>,
    pub bins: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub frame_s: Option<f64>,
    pub filter_len: Option<usize>,
}

impl FileConfig {
    /// Parses `path`; relative paths inside are taken relative to the file.
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return usage(format!("cannot read config {}: {e}", path.display())),
        };
        let mut cfg: FileConfig = match toml::from_str(&text) {
            Ok(c) => c,
            Err(e) => return usage(format!("invalid config {}: {e}", path.display())),
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Everything a training run needs, after merging file and flags.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub manifest: PathBuf,
    pub mode: SeparationMode,
    pub out: PathBuf,
    pub augment_kinds: Vec<AugmentKind>,
    pub augment_probability: f64,
    pub train: TrainConfig,
    pub model: UNetConfig,
    pub eval: EvalConfig,
}

pub fn parse_mode(s: &str) -> CmdResult<SeparationMode> {
    s.parse().or_else(|_| usage(format!("unknown mode {s:?}; expected two-stem or four-stem")))
}

pub fn parse_kinds(kinds: &[String]) -> CmdResult<Vec<AugmentKind>> {
    kinds
        .iter()
        .filter(|k| !k.is_empty())
        .map(|k| k.parse().or_else(|_| usage(format!("unknown augmentation kind {k:?}"))))
        .collect()
}

/// Desk-scale defaults: a depth-3 network on 64 x 128 grids.
pub fn default_model() -> UNetConfig {
    UNetConfig { depth: 3, base_channels: 8, frames: 64, bins: 128, ..Default::default() }
}

pub fn default_train() -> TrainConfig {
    TrainConfig { epochs: 10, steps_per_epoch: 200, ..Default::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "seed = 3\nmanifest = \"data/m.json\"\nout = \"/abs/out\"\n[train]\nepochs = 4\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest.unwrap(), dir.path().join("data/m.json"));
        assert_eq!(cfg.out.unwrap(), PathBuf::from("/abs/out"));
        assert_eq!(cfg.train.epochs, Some(4));
    }

    #[test]
    fn unreadable_config_is_a_usage_error() {
        let err = FileConfig::load(Path::new("/no/such/file.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
