//! Checkpoint container.
//!
//! Layout: the magic bytes `DYADCKPT`, a little-endian `u32` format version,
//! a `u64` header length, a JSON header (config, history and a tensor index),
//! every tensor as little-endian `f64` in index order, and finally the
//! SHA-256 digest of all preceding bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kernel::Tensor;
use crate::model::ModelParams;

use super::{Optimizers, TrainConfig, TrainError, TrainHistory};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DYADCKPT";
const DIGEST_LEN: usize = 32;
const PREAMBLE_LEN: usize = MAGIC.len() + 4 + 8;

/// A resumable snapshot of training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizers: Optimizers,
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn epoch(&self) -> usize {
        self.history.len()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    generator_steps: u64,
    discriminator_steps: u64,
    history: TrainHistory,
    tensors: Vec<TensorEntry>,
}

fn all_tensors(c: &Checkpoint) -> Vec<(String, &Tensor)> {
    let mut out = c.params.named();
    let groups = [
        ("generator", &c.optimizers.generator, c.params.generator.named()),
        ("discriminator", &c.optimizers.discriminator, c.params.discriminator.named()),
    ];
    for (group, state, names) in groups {
        for (i, (name, _)) in names.iter().enumerate() {
            out.push((format!("adam.{group}.m.{name}"), &state.first[i]));
            out.push((format!("adam.{group}.v.{name}"), &state.second[i]));
        }
    }
    out
}

pub fn write_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let tensors = all_tensors(c);
    let header = Header {
        config: c.config.clone(),
        epoch: c.epoch(),
        generator_steps: c.optimizers.generator.step,
        discriminator_steps: c.optimizers.discriminator.step,
        history: c.history.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header is plain data");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Corrupt(msg.into())
}

/// Parses a checkpoint. Nothing is returned unless every byte checks out.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    if bytes.len() < PREAMBLE_LEN + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(TrainError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json_end = PREAMBLE_LEN
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header =
        serde_json::from_slice(&body[PREAMBLE_LEN..json_end]).map_err(|e| corrupt(format!("header: {e}")))?;
    header.config.validate().map_err(|e| corrupt(e.to_string()))?;
    if header.epoch != header.history.len() {
        return Err(corrupt("epoch count disagrees with history"));
    }

    let mut payload = body[json_end..].chunks_exact(8);
    if !payload.remainder().is_empty() {
        return Err(corrupt("payload is not a whole number of values"));
    }
    let mut values = std::collections::HashMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let chunk = payload.next().ok_or_else(|| corrupt("payload shorter than index"))?;
            data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        let t = Tensor::new(entry.shape.clone(), data).map_err(|e| corrupt(format!("{}: {e}", entry.name)))?;
        if values.insert(entry.name.clone(), t).is_some() {
            return Err(corrupt(format!("duplicate tensor `{}`", entry.name)));
        }
    }
    if payload.next().is_some() {
        return Err(corrupt("payload longer than index"));
    }

    let mut params = ModelParams::init(header.config.model, header.config.seed);
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor, TrainError> {
        let t = values.remove(name).ok_or_else(|| corrupt(format!("missing tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(corrupt(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    };
    for (name, slot) in params.generator.named_mut().into_iter().chain(params.discriminator.named_mut()) {
        *slot = take(&name, slot.shape())?;
    }
    let mut optimizers = Optimizers::new(&params);
    let groups = [
        ("generator", &mut optimizers.generator, params.generator.named(), header.generator_steps),
        (
            "discriminator",
            &mut optimizers.discriminator,
            params.discriminator.named(),
            header.discriminator_steps,
        ),
    ];
    for (group, state, names, steps) in groups {
        state.step = steps;
        for (i, (name, t)) in names.iter().enumerate() {
            state.first[i] = take(&format!("adam.{group}.m.{name}"), t.shape())?;
            state.second[i] = take(&format!("adam.{group}.v.{name}"), t.shape())?;
        }
    }
    if let Some(extra) = values.keys().next() {
        return Err(corrupt(format!("unexpected tensor `{extra}`")));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        optimizers,
        history: header.history,
    })
}

/// Writes atomically: a failed write never clobbers an existing checkpoint.
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&write_checkpoint(c)).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(&bytes)
}
