use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::Mode;
use super::metrics::{health_index, HealthIndex};
use super::network::Network;
use crate::dsp::{PreprocessConfig, Preprocessor};
use crate::error::{Error, Result};
use crate::signal::SignalSegment;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Hex SHA-256 over the architecture and every parameter, little-endian.
pub fn model_version(net: &Network) -> String {
    let mut h = Sha256::new();
    h.update(net.arch.name().as_bytes());
    for l in &net.layers {
        h.update(l.kind().as_bytes());
    }
    for v in net.flat_params() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// A trained network together with the preprocessing it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub model_version: String,
    pub train_seed: Option<u64>,
    pub preprocess: PreprocessConfig,
    pub network: Network,
}

impl Checkpoint {
    pub fn new(network: Network, preprocess: PreprocessConfig, train_seed: Option<u64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            model_version: model_version(&network),
            train_seed,
            preprocess,
            network,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and verifies the format number and the parameter hash.
    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::IncompatibleModel(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::IncompatibleModel(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT})",
                ck.format
            )));
        }
        let v = model_version(&ck.network);
        if v != ck.model_version {
            return Err(Error::IncompatibleModel(format!(
                "parameters hash to {v}, checkpoint claims {}",
                ck.model_version
            )));
        }
        ck.preprocess.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn preprocessor(&self) -> Result<Preprocessor> {
        Preprocessor::new(&self.preprocess)
    }

    /// Patient probability for a raw segment.
    pub fn score(&self, seg: &SignalSegment) -> Result<f64> {
        let pre = self.preprocessor()?;
        let x = self.network.encode(&pre.highpass(seg)?)?;
        self.network.forward(&x, Mode::Infer)
    }

    pub fn health_index(&self, seg: &SignalSegment) -> Result<HealthIndex> {
        health_index(self.score(seg)?)
    }
}
