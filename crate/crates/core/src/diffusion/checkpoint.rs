//! Binary container for trained weights.
//!
//! Layout: `b"RESD"`, `u32` LE format version, `u64` LE manifest length,
//! the UTF-8 JSON manifest, then every parameter as `f32` LE in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_artifact, write_atomic};
use crate::numerics::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"RESD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// `"denoiser"` or `"ranker"`.
    pub kind: String,
    pub config_hash: String,
    /// Hashes of the artifacts this checkpoint was built from, by role.
    pub lineage: BTreeMap<String, String>,
    pub layers: Vec<LayerShape>,
    /// Model-specific settings needed to rebuild the network.
    pub model: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub weights: Vec<f32>,
}

impl Checkpoint {
    /// Snapshot of `params`; values are stored as `f32`.
    pub fn from_params(
        kind: &str,
        config_hash: &str,
        lineage: BTreeMap<String, String>,
        model: serde_json::Value,
        params: &ParamSet,
    ) -> Self {
        let layers = params
            .iter()
            .map(|p| LayerShape {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect();
        let weights = params
            .iter()
            .flat_map(|p| p.value.data().iter().map(|&v| v as f32))
            .collect();
        Self {
            manifest: CheckpointManifest {
                kind: kind.to_string(),
                config_hash: config_hash.to_string(),
                lineage,
                layers,
                model,
            },
            weights,
        }
    }

    /// Overwrites the values of `params`, which must have the declared layout.
    pub fn load_into(&self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.manifest.layers.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                self.manifest.layers.len(),
                params.len()
            )));
        }
        let mut offset = 0;
        for (p, layer) in params.iter_mut().zip(&self.manifest.layers) {
            if p.name != layer.name || p.value.shape() != layer.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    layer.name,
                    layer.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let n = p.value.len();
            let data: Vec<f64> = self.weights[offset..offset + n].iter().map(|&v| v as f64).collect();
            p.value = Tensor::new(layer.shape.clone(), data)?;
            offset += n;
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(Error::Invalid(format!(
                "expected a {kind} checkpoint, found {}",
                self.manifest.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            line: 0,
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: CheckpointManifest =
            serde_json::from_slice(body).map_err(|e| bad(&format!("manifest: {e}")))?;
        let payload = &bytes[16 + len..];
        let expected: usize = manifest.layers.iter().map(|l| l.shape.iter().product::<usize>()).sum();
        if payload.len() != 4 * expected {
            return Err(bad(&format!(
                "payload holds {} bytes, manifest declares {} weights",
                payload.len(),
                expected
            )));
        }
        let weights = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { manifest, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_artifact(path)?;
        Self::from_bytes(&bytes, path)
    }
}

/// Loss log as CSV with header `step,loss`.
pub fn loss_log_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
