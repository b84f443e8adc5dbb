//! Versioned binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "GZWORLD\0"
//! version  u32 LE
//! header   u64 LE length + canonical JSON (sorted keys, compact)
//! blobs    u32 LE count, then per blob:
//!            u32 name length, UTF-8 name,
//!            u32 rank, rank x u64 dims,
//!            u64 checksum (first 8 bytes of SHA-256 over the data bytes),
//!            numel x f64 LE
//! ```
//!
//! Blob names are `online/<param>`, `target/<param>`, `adam_m/<param>` and
//! `adam_v/<param>`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError};
use crate::numcore::{OptimizerState, ParamStore, Tensor};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"GZWORLD\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("blob {0} failed its checksum")]
    CorruptBlob(String),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("blob {0} missing from checkpoint")]
    MissingBlob(String),
    #[error("blob {name} has shape {found:?}, model expects {expected:?}")]
    BlobShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("{0} trailing bytes after the last blob")]
    TrailingBytes(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Everything needed to resume training bit-for-bit.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerState,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub dataset_seed: u64,
    pub train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    step: u64,
    dataset_seed: u64,
    optimizer: OptimizerState,
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    // serde_json::Value keeps object keys sorted
    let v = serde_json::to_value(value).expect("header serializes");
    serde_json::to_vec(&v).expect("value serializes")
}

fn put_blob(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    let data: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    out.extend(checksum(&data).to_le_bytes());
    out.extend(data);
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        model: ckpt.model.config.clone(),
        train: ckpt.train.clone(),
        step: ckpt.step,
        dataset_seed: ckpt.dataset_seed,
        optimizer: ckpt.optimizer.clone(),
    };
    let header = canonical_json(&header);
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((header.len() as u64).to_le_bytes());
    out.extend(&header);

    let online = ckpt.model.online.params();
    let target = ckpt.model.target.params();
    let count = online.len() * 3 + target.len();
    out.extend((count as u32).to_le_bytes());
    for p in online {
        put_blob(&mut out, &format!("online/{}", p.name), &p.value);
    }
    for p in target {
        put_blob(&mut out, &format!("target/{}", p.name), &p.value);
    }
    for (p, m) in online.iter().zip(&ckpt.optimizer.m) {
        put_blob(&mut out, &format!("adam_m/{}", p.name), m);
    }
    for (p, v) in online.iter().zip(&ckpt.optimizer.v) {
        put_blob(&mut out, &format!("adam_v/{}", p.name), v);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8")))
    }
}

fn take_blobs(
    store: &ParamStore,
    prefix: &str,
    blobs: &mut HashMap<String, Tensor>,
) -> Result<Vec<Tensor>, CheckpointError> {
    let mut out = Vec::with_capacity(store.len());
    for p in store.params() {
        let name = format!("{prefix}/{}", p.name);
        let t = blobs
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingBlob(name.clone()))?;
        if t.shape() != p.value.shape() {
            return Err(CheckpointError::BlobShape {
                name,
                found: t.shape().to_vec(),
                expected: p.value.shape().to_vec(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = r.u64("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let count = r.u32("blob count")?;
    let mut blobs = HashMap::new();
    for _ in 0..count {
        let nlen = r.u32("blob name length")? as usize;
        let name = String::from_utf8(r.take(nlen, "blob name")?.to_vec())
            .map_err(|_| CheckpointError::Header("blob name is not UTF-8".into()))?;
        let rank = r.u32("blob rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("blob dims")? as usize);
        }
        let sum = r.u64("blob checksum")?;
        let nbytes = shape
            .iter()
            .try_fold(8usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated("blob data"))?;
        let data = r.take(nbytes, "blob data")?;
        if checksum(data) != sum {
            return Err(CheckpointError::CorruptBlob(name));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
            .collect();
        let t = Tensor::new(shape, values).map_err(ModelError::from)?;
        blobs.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }

    let mut model = Model::new(header.model)?;
    let online = take_blobs(&model.online, "online", &mut blobs)?;
    let target = take_blobs(&model.target, "target", &mut blobs)?;
    let mut optimizer = header.optimizer;
    optimizer.m = take_blobs(&model.online, "adam_m", &mut blobs)?;
    optimizer.v = take_blobs(&model.online, "adam_v", &mut blobs)?;
    for (p, t) in model.online.params_mut().iter_mut().zip(online) {
        p.value = t;
    }
    for (p, t) in model.target.params_mut().iter_mut().zip(target) {
        p.value = t;
    }
    if let Some(extra) = blobs.keys().next() {
        return Err(CheckpointError::Header(format!("unexpected blob {extra}")));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        step: header.step,
        dataset_seed: header.dataset_seed,
        train: header.train,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, write_checkpoint(ckpt)).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_checkpoint(&bytes)
}
