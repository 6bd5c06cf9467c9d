//! Optional TOML configuration shared by all commands.

use std::path::Path;

use sentinel_core::calibration::{CalibrationOptions, DEFAULT_STEPS};
use sentinel_core::calibration::DEFAULT_K_GRID;
use sentinel_core::datasets::{SplitMode, SplitSpec};
use sentinel_core::embedding::TrainingConfig;
use sentinel_core::index::IndexConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub embedding: TrainingConfig,
    pub index: IndexConfig,
    pub calibration: CalibrationSettings,
    pub split: SplitSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 1,
            embedding: TrainingConfig::default(),
            index: IndexConfig::default(),
            calibration: CalibrationSettings::default(),
            split: SplitSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub k_grid: Vec<usize>,
    pub steps: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            k_grid: DEFAULT_K_GRID.to_vec(),
            steps: DEFAULT_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPreset {
    /// Half of the normals train.
    Csic,
    /// 80% of the normals train.
    Atrdf,
    /// `train_fraction` of the normals train.
    Fraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub mode: SplitPreset,
    pub train_fraction: f64,
    /// Share of the test part that goes to calibration; the rest is the
    /// evaluation part.
    pub calibration_fraction: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            mode: SplitPreset::Atrdf,
            train_fraction: 0.8,
            calibration_fraction: 0.5,
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let s: Settings =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.embedding.validate().map_err(CliError::config)?;
        self.index.validate().map_err(CliError::config)?;
        if self.calibration.steps == 0 {
            return Err(CliError::Config("calibration.steps must be positive".into()));
        }
        if self.calibration.k_grid.is_empty() || self.calibration.k_grid.iter().any(|&k| k < 2) {
            return Err(CliError::Config("calibration.k_grid needs values of at least 2".into()));
        }
        let f = self.split.calibration_fraction;
        if !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&self.split.train_fraction) {
            return Err(CliError::Config("split fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Makes `seed` the single source of randomness.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.embedding.seed = self.seed;
        self.index.seed = self.seed;
        self
    }

    pub fn split_spec(&self) -> SplitSpec {
        let mode = match self.split.mode {
            SplitPreset::Csic => SplitMode::Csic,
            SplitPreset::Atrdf => SplitMode::Atrdf,
            SplitPreset::Fraction => SplitMode::Fraction,
        };
        SplitSpec {
            train_fraction: self.split.train_fraction,
            ..SplitSpec::new(mode, self.seed)
        }
    }

    pub fn calibration_options(&self, exhaustive: bool) -> CalibrationOptions {
        if exhaustive {
            CalibrationOptions {
                steps: self.calibration.steps,
                ..CalibrationOptions::exhaustive()
            }
        } else {
            CalibrationOptions {
                k_grid: self.calibration.k_grid.clone(),
                steps: self.calibration.steps,
            }
        }
    }
}
