//! JSON checkpoints holding the architecture, the training seed and every
//! parameter as little-endian IEEE-754 doubles (base64), so a reload
//! reproduces encodings bit for bit.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::network::{Architecture, NetworkParams};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::series::NormStats;

pub const CHECKPOINT_FORMAT: &str = "wavecal-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: Architecture,
    pub train_seed: u64,
    /// Parameter count, checked on load.
    pub n_params: usize,
    /// Base64 of the parameters as consecutive little-endian f64.
    pub params_f64le: String,
    /// Normalization statistics fit on the training split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats: Option<NormStats>,
    /// Settings the parameters were trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(params: &NetworkParams, train_seed: u64, norm_stats: Option<NormStats>) -> Self {
        let bytes: Vec<u8> = params.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            architecture: params.arch.clone(),
            train_seed,
            n_params: params.len(),
            params_f64le: STANDARD.encode(bytes),
            norm_stats,
            train_config: None,
        }
    }

    pub fn with_train_config(mut self, cfg: TrainConfig) -> Self {
        self.train_config = Some(cfg);
        self
    }

    pub fn params(&self) -> Result<NetworkParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        let bytes = STANDARD
            .decode(&self.params_f64le)
            .map_err(|e| Error::Config(format!("checkpoint parameters: {e}")))?;
        if bytes.len() != 8 * self.n_params {
            return Err(Error::LengthMismatch(format!(
                "checkpoint declares {} parameters but holds {} bytes",
                self.n_params,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        NetworkParams::from_data(self.architecture.clone(), data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
