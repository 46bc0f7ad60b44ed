//! Framed binary containers for checkpoints and weight files.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header,
//! the tensors as little-endian `f64` in header order, then a SHA-256 of
//! every preceding byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spgan_core::fen::{builtin_extractor, FeatureExtractor, FenConfig, ResNet50Fen};
use spgan_core::trainer::{Checkpoint, CheckpointHeader};
use spgan_core::{Shape, Tensor};

use crate::error::{read, write, Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPGANCK1";
const TENSORS_MAGIC: &[u8; 8] = b"SPGANTS1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Frame<H> {
    header: H,
    tensors: Vec<TensorEntry>,
}

fn encode_frame<H: Serialize>(magic: &[u8; 8], header: H, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let s = t.shape();
            TensorEntry {
                name: name.clone(),
                shape: [s.n, s.c, s.h, s.w],
            }
        })
        .collect();
    let json = serde_json::to_vec(&Frame { header, tensors: entries }).expect("header serializes");
    let payload: usize = tensors.iter().map(|(_, t)| t.data().len() * 8).sum();
    let mut out = Vec::with_capacity(20 + json.len() + payload + 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Returns the header, tensors and the hex checksum.
fn decode_frame<H: for<'de> Deserialize<'de>>(magic: &[u8; 8], bytes: &[u8], name: &str) -> Result<(H, Vec<(String, Tensor)>, String)> {
    let bad = |field: &str, reason: String| Error::format(name, field, reason);
    if bytes.len() < 20 + 32 {
        return Err(bad("length", format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(bad("magic", "not a container of the expected kind".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let actual = Sha256::digest(body);
    if actual.as_slice() != digest {
        return Err(bad("checksum", "SHA-256 mismatch; file is truncated or corrupted".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad("version", format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &body[20..];
    if hlen > rest.len() {
        return Err(bad("header", format!("header length {hlen} exceeds file")));
    }
    let frame: Frame<H> = serde_json::from_slice(&rest[..hlen]).map_err(|e| bad("header", e.to_string()))?;
    let mut payload = &rest[hlen..];
    let mut tensors = Vec::with_capacity(frame.tensors.len());
    for e in frame.tensors {
        let [n, c, h, w] = e.shape;
        let shape = Shape::new(n, c, h, w);
        let need = shape.len() * 8;
        if payload.len() < need {
            return Err(bad("payload", format!("tensor {} is truncated", e.name)));
        }
        let data = payload[..need].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        payload = &payload[need..];
        tensors.push((e.name, Tensor::from_vec(shape, data)?));
    }
    if !payload.is_empty() {
        return Err(bad("payload", format!("{} trailing bytes", payload.len())));
    }
    Ok((frame.header, tensors, hex(&actual)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    encode_frame(CHECKPOINT_MAGIC, &ckpt.header, &ckpt.tensors)
}

pub fn decode_checkpoint(bytes: &[u8], name: &str) -> Result<(Checkpoint, String)> {
    let (header, tensors, sum) = decode_frame::<CheckpointHeader>(CHECKPOINT_MAGIC, bytes, name)?;
    Ok((Checkpoint { header, tensors }, sum))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write(path, &encode_checkpoint(ckpt))
}

/// The checkpoint and its SHA-256.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    decode_checkpoint(&read(path)?, &path.display().to_string())
}

#[derive(Serialize, Deserialize)]
struct TensorsHeader {
    kind: String,
}

pub fn save_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    write(path, &encode_frame(TENSORS_MAGIC, TensorsHeader { kind: "weights".into() }, tensors))
}

pub fn load_tensors(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let (_, tensors, _) = decode_frame::<TensorsHeader>(TENSORS_MAGIC, &read(path)?, &path.display().to_string())?;
    Ok(tensors.into_iter().collect())
}

/// Build the configured feature extractor, loading weights when needed.
pub fn extractor(config: &FenConfig) -> Result<Box<dyn FeatureExtractor>> {
    match (config.backend.as_str(), &config.weights) {
        ("resnet50", Some(path)) => {
            let mut weights = load_tensors(Path::new(path))?;
            let fen = ResNet50Fen::from_tensors(|name| weights.remove(name))?;
            fen.stage_index(&config.layer)?;
            Ok(Box::new(fen))
        }
        _ => Ok(builtin_extractor(config)?),
    }
}
