//! Checkpoints: a JSON manifest next to a raw little-endian f32 blob.
//!
//! `model.json` names every tensor (parameters first, then the AdamW
//! moments) with its shape, dtype and offset into `model.bin`, and carries
//! the network config, seed, epoch, step and a SHA-256 of the blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{build_unet, Network, Param, UNetConfig};
use crate::optim::{AdamWConfig, AdamWState, TrainConfig};

const FORMAT: &str = "sre-unet-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Offset in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub hyper: AdamWConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: UNetConfig,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub blob: String,
    pub blob_len: usize,
    pub sha256: String,
    pub optimizer: Option<OptimizerEntry>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: UNetConfig,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub params: Vec<Param<f32>>,
    pub optimizer: Option<AdamWState>,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>, optimizer: Option<&AdamWState>, epoch: usize) -> Self {
        Checkpoint {
            config: net.config().clone(),
            train: None,
            seed: net.seed(),
            epoch,
            step: optimizer.map_or(0, |s| s.step),
            params: net.params().to_vec(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuild the network from config and seed, then load the stored values.
    pub fn to_network(&self) -> Result<Network<f32>> {
        let mut net = build_unet::<f32>(&self.config, self.seed)?;
        net.load_params(self.params.clone()).map_err(|e| {
            Error::CorruptCheckpoint(format!("parameters do not fit the stored config: {e}"))
        })?;
        Ok(net)
    }
}

/// Blob path belonging to a manifest path (`x.json` → `x.bin`).
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: &str, role, shape: &[usize], data: &[f32], blob: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            role,
            shape: shape.to_vec(),
            dtype: "f32".into(),
            offset,
        });
        offset += data.len();
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for p in &ckpt.params {
        push(&p.name, TensorRole::Param, &p.shape, &p.data, &mut blob);
    }
    if let Some(s) = &ckpt.optimizer {
        for (p, m) in ckpt.params.iter().zip(&s.m) {
            push(&p.name, TensorRole::AdamM, &p.shape, m, &mut blob);
        }
        for (p, v) in ckpt.params.iter().zip(&s.v) {
            push(&p.name, TensorRole::AdamV, &p.shape, v, &mut blob);
        }
    }
    let bin = blob_path(path);
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: VERSION,
        config: ckpt.config.clone(),
        train: ckpt.train.clone(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        step: ckpt.step,
        blob: bin
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("bad checkpoint path {}", path.display()))
            })?
            .to_string(),
        blob_len: blob.len(),
        sha256: hex::encode(Sha256::digest(&blob)),
        optimizer: ckpt.optimizer.as_ref().map(|s| OptimizerEntry {
            hyper: s.hyper,
            step: s.step,
        }),
        tensors,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| corrupt(format!("{}: unreadable manifest: {e}", path.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(corrupt(format!(
            "unsupported format {} v{}",
            m.format, m.version
        )));
    }
    let bin = path.with_file_name(&m.blob);
    let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if blob.len() != m.blob_len {
        return Err(corrupt(format!(
            "blob {} has {} bytes, manifest says {}",
            bin.display(),
            blob.len(),
            m.blob_len
        )));
    }
    let digest = hex::encode(Sha256::digest(&blob));
    if digest != m.sha256 {
        return Err(corrupt(format!("checksum mismatch for {}", bin.display())));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut expected_offset = 0usize;
    let mut groups: [Vec<Param<f32>>; 3] = Default::default();
    for t in &m.tensors {
        if t.dtype != "f32" {
            return Err(corrupt(format!(
                "tensor {} has unsupported dtype {}",
                t.name, t.dtype
            )));
        }
        let len: usize = t.shape.iter().product();
        if t.offset != expected_offset || t.offset + len > floats.len() {
            return Err(corrupt(format!(
                "tensor {} is out of place in the blob",
                t.name
            )));
        }
        expected_offset += len;
        let g = match t.role {
            TensorRole::Param => 0,
            TensorRole::AdamM => 1,
            TensorRole::AdamV => 2,
        };
        groups[g].push(Param {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data: floats[t.offset..t.offset + len].to_vec(),
        });
    }
    if expected_offset * 4 != blob.len() || blob.len() % 4 != 0 {
        return Err(corrupt("blob length does not match the tensor list"));
    }
    let [params, ms, vs] = groups;
    let optimizer = match m.optimizer {
        None => {
            if !ms.is_empty() || !vs.is_empty() {
                return Err(corrupt("moment tensors present without optimizer state"));
            }
            None
        }
        Some(o) => {
            let names_match = |g: &[Param<f32>]| {
                g.len() == params.len()
                    && g.iter()
                        .zip(&params)
                        .all(|(a, b)| a.name == b.name && a.shape == b.shape)
            };
            if !names_match(&ms) || !names_match(&vs) {
                return Err(corrupt("optimizer moments do not mirror the parameters"));
            }
            Some(AdamWState {
                hyper: o.hyper,
                step: o.step,
                m: ms.into_iter().map(|p| p.data).collect(),
                v: vs.into_iter().map(|p| p.data).collect(),
            })
        }
    };
    Ok(Checkpoint {
        config: m.config,
        train: m.train,
        seed: m.seed,
        epoch: m.epoch,
        step: m.step,
        params,
        optimizer,
    })
}
