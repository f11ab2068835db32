//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! saved model reloads bit-exactly and equal models give equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::Linear;
use super::params::{EncoderConfig, EncoderParams, Heads, ModelParams};
use super::train::{Adam, TrainConfig};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Moments {
    pub train_config: Option<TrainConfig>,
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: EncoderParams,
    pub heads: Heads,
    pub naf_map: Linear,
    pub moments: Moments,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, train_config: Option<TrainConfig>, optimizer: Option<&Adam>) -> Self {
        let adam = optimizer.cloned().unwrap_or_else(|| Adam {
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        });
        Self {
            version: FORMAT_VERSION,
            encoder: params.encoder.clone(),
            heads: params.heads.clone(),
            naf_map: params.naf_map.clone(),
            moments: Moments {
                train_config,
                step: adam.step,
                first: adam.first,
                second: adam.second,
            },
        }
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    /// Rebuilds the parameters, checking every array against the encoder
    /// configuration.
    pub fn params(&self) -> Result<ModelParams> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let params = ModelParams {
            encoder: self.encoder.clone(),
            naf_map: self.naf_map.clone(),
            heads: self.heads.clone(),
        };
        let reference = ModelParams::init(*self.encoder_config())?;
        let shapes = |p: &ModelParams| p.slices().iter().map(|s| s.len()).collect::<Vec<_>>();
        if shapes(&params) != shapes(&reference) {
            return Err(Error::Checkpoint("parameter shapes do not match the encoder configuration".into()));
        }
        let linears_ok = [
            (&params.encoder.sentence, &reference.encoder.sentence),
            (&params.encoder.attention, &reference.encoder.attention),
            (&params.encoder.context, &reference.encoder.context),
            (&params.naf_map, &reference.naf_map),
        ]
        .iter()
        .all(|(a, b)| a.rows == b.rows && a.cols == b.cols);
        if !linears_ok {
            return Err(Error::Checkpoint("layer dimensions do not match the encoder configuration".into()));
        }
        let n = params.len();
        let m = &self.moments;
        if !(m.first.is_empty() && m.second.is_empty()) && (m.first.len() != n || m.second.len() != n) {
            return Err(Error::Checkpoint("optimizer moments do not match the parameter count".into()));
        }
        Ok(params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
