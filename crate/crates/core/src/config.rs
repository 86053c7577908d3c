//! Run configuration with every default in one place.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Architecture, TrainConfig};
use crate::calibration::RLParams;
use crate::error::{Error, Result};
use crate::series::WindowConfig;
use crate::synth::BenchmarkConfig;
use crate::wavelet::{DecompositionLevels, FilterBank};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveletConfig {
    pub family: String,
    /// Decomposition depth; `None` uses the maximum for the window length.
    pub levels: Option<usize>,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            family: "db1".into(),
            levels: None,
        }
    }
}

impl WaveletConfig {
    pub fn bank(&self) -> Result<FilterBank> {
        FilterBank::by_name(&self.family)
    }

    pub fn levels_for(&self, len: usize) -> Result<DecompositionLevels> {
        let levels = DecompositionLevels(
            self.levels
                .unwrap_or_else(|| DecompositionLevels::max_for(len)),
        );
        levels.check(len)?;
        Ok(levels)
    }
}

/// Network shape; input dimensions follow from the window and wavelet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub filters: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    pub latent_dim: usize,
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let a = Architecture::for_input(1, 1);
        Self {
            filters: a.filters,
            kernel: a.kernel,
            stride: a.stride,
            latent_dim: a.latent_dim,
            dropout: a.dropout_rate,
        }
    }
}

impl NetworkConfig {
    pub fn architecture(&self, rows: usize, cols: usize) -> Architecture {
        Architecture {
            input_rows: rows,
            input_cols: cols,
            filters: self.filters,
            kernel: self.kernel,
            stride: self.stride,
            latent_dim: self.latent_dim,
            dropout_rate: self.dropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Benchmark generation and anomaly scheduling.
    pub data: u64,
    /// Weight init, shuffling, dropout masks and Monte-Carlo draws.
    pub train: u64,
    /// Exploration in calibration.
    pub rl: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 42,
            train: 7,
            rl: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Paths {
    /// Input series; defaults to `series.csv` in the output directory.
    pub input: Option<PathBuf>,
    /// Anomaly schedule; defaults to `labels.json` in the output directory.
    pub labels: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub window: WindowConfig,
    pub wavelet: WaveletConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub rl: RLParams,
    /// Benchmark generator and injector settings. Its `seed` and `window`
    /// are overridden by `seeds.data` and `window`.
    pub synth: BenchmarkConfig,
    pub seeds: Seeds,
    pub paths: Paths,
    /// Leading fraction of windows used for training and calibration; the
    /// rest is held out for evaluation.
    pub train_fraction: f64,
    /// Dropout-on forward passes per window for the uncertainty score.
    pub mc_samples: usize,
    /// Percentile of normal training errors that defines one normalized
    /// error unit and the static baseline threshold.
    pub error_scale_percentile: f64,
    /// Calibration episodes run after each training epoch; 0 calibrates
    /// once after training.
    pub interleave_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            wavelet: WaveletConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            rl: RLParams::default(),
            synth: BenchmarkConfig::default(),
            seeds: Seeds::default(),
            paths: Paths::default(),
            train_fraction: 0.7,
            mc_samples: 30,
            error_scale_percentile: 95.0,
            interleave_episodes: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Copies the shared settings into the nested sections.
    pub fn resolved(mut self) -> Self {
        self.synth.seed = self.seeds.data;
        self.synth.window = self.window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.wavelet.bank()?;
        self.wavelet.levels_for(self.window.length)?;
        self.network.architecture(1, 1).validate()?;
        self.train.validate()?;
        self.rl.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.mc_samples < 2 {
            return Err(Error::Config("need at least 2 Monte-Carlo samples".into()));
        }
        if !(self.error_scale_percentile > 0.0 && self.error_scale_percentile <= 100.0) {
            return Err(Error::Config(format!(
                "error scale percentile {}",
                self.error_scale_percentile
            )));
        }
        if !(0.0..=1.0).contains(&self.synth.anomaly_fraction) {
            return Err(Error::Config(format!(
                "anomaly fraction {} outside [0, 1]",
                self.synth.anomaly_fraction
            )));
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
