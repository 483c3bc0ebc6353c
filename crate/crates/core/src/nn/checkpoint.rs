//! Checkpoint container: one JSON header line describing configs and
//! tensor layout, then raw little-endian f32 payload (parameters followed
//! by Adam moments). Loading verifies the architecture config hash.

use super::adam::AdamState;
use super::feat::Feat;
use super::params::ParamStore;
use super::train::TrainConfig;
use super::unet::UNetConfig;
use crate::diffusion::NcaConfig;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub nca: NcaConfig,
    pub sched: NoiseSchedule,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    config_hash: String,
    unet: UNetConfig,
    train: TrainConfig,
    nca: NcaConfig,
    sched: NoiseSchedule,
    tensors: Vec<TensorEntry>,
    adam_step: Option<usize>,
}

pub fn config_hash(unet: &UNetConfig) -> String {
    let json = serde_json::to_string(unet).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    format!("{:x}", h.finalize())[..16].to_string()
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tensors = ckpt
        .params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.to_string(),
            shape: [t.n, t.c, t.h, t.w],
        })
        .collect();
    let header = Header {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config_hash: config_hash(&ckpt.unet),
        unet: ckpt.unet.clone(),
        train: ckpt.train,
        nca: ckpt.nca,
        sched: ckpt.sched,
        tensors,
        adam_step: ckpt.adam.as_ref().map(|a| a.step),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    let mut push = |vals: &[f32]| {
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    for i in 0..ckpt.params.len() {
        push(&ckpt.params.tensor(i).data);
    }
    if let Some(adam) = &ckpt.adam {
        for m in &adam.m {
            push(m);
        }
        for v in &adam.v {
            push(v);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse(format!("{}: no header line", path.display())))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Parse(format!("{}: bad header: {e}", path.display())))?;
    if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported checkpoint schema {}",
            path.display(),
            header.schema_version
        )));
    }
    let expect_hash = config_hash(&header.unet);
    if header.config_hash != expect_hash {
        return Err(Error::ConfigHashMismatch {
            expected: expect_hash,
            found: header.config_hash,
        });
    }
    let payload = &bytes[nl + 1..];
    let mut offset = 0usize;
    let mut take = |count: usize| -> Result<Vec<f32>> {
        let need = count * 4;
        if payload.len() < offset + need {
            return Err(Error::Truncated(format!(
                "{}: checkpoint payload short at offset {offset}",
                path.display()
            )));
        }
        let out = payload[offset..offset + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += need;
        Ok(out)
    };
    let mut params = ParamStore::new();
    for entry in &header.tensors {
        let [n, c, h, w] = entry.shape;
        let data = take(n * c * h * w)?;
        params.add(
            entry.name.clone(),
            Feat {
                n,
                c,
                h,
                w,
                data,
            },
        );
    }
    let adam = match header.adam_step {
        Some(step) => {
            let mut m = Vec::with_capacity(params.len());
            let mut v = Vec::with_capacity(params.len());
            for i in 0..params.len() {
                m.push(take(params.tensor(i).numel())?);
            }
            for i in 0..params.len() {
                v.push(take(params.tensor(i).numel())?);
            }
            Some(AdamState { step, m, v })
        }
        None => None,
    };
    Ok(Checkpoint {
        unet: header.unet,
        train: header.train,
        nca: header.nca,
        sched: header.sched,
        params,
        adam,
    })
}
