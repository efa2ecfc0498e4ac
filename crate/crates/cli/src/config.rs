//! The run configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xbarsim::{ClinicalWindows, DeviceParameters, HardwareParams, SweepGrid, TrainConfig, WeightScheme};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub clinical: ClinicalWindows,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub device: DeviceParameters,
    #[serde(default)]
    pub mapping: MappingSection,
    #[serde(default)]
    pub hardware: HardwareParams,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// EDF recordings and the summary file.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/dataset`.
    pub dataset_dir: Option<PathBuf>,
    /// Defaults to `<patient>-summary.txt` inside `data_dir`.
    pub summary: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            dataset_dir: None,
            summary: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    /// Channel labels to keep, in order. Empty keeps every channel of the first file.
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    pub scheme: WeightScheme,
    pub fold_batchnorm: bool,
}

impl Default for MappingSection {
    fn default() -> Self {
        Self {
            scheme: WeightScheme::DoubleColumn,
            fold_batchnorm: false,
        }
    }
}

/// Network used by `cost`; the window length comes from `[clinical]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub channels: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { channels: 22 }
    }
}

impl RunConfig {
    /// Parses and validates a config; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, UsageError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.paths.data_dir);
        fix(&mut cfg.paths.output_dir);
        if let Some(p) = cfg.paths.dataset_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.paths.summary.as_mut() {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let usage = |e: &dyn std::fmt::Display| UsageError(format!("config: {e}"));
        self.clinical.validate().map_err(|e| usage(&e))?;
        self.device.validate().map_err(|e| usage(&e))?;
        self.hardware.validate().map_err(|e| usage(&e))?;
        self.training.validate().map_err(|e| usage(&e))?;
        self.sweep.validate().map_err(|e| usage(&e))?;
        if self.network.channels == 0 {
            return Err(UsageError("config: network.channels must be positive".into()));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths
            .dataset_dir
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("dataset"))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.paths.output_dir.join("train")
    }

    /// Fails with a usage error unless `path` exists.
    pub fn require(path: &Path, what: &str) -> Result<(), UsageError> {
        if path.exists() {
            Ok(())
        } else {
            Err(UsageError(format!("{what} not found: {}", path.display())))
        }
    }
}
