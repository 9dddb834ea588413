//! Lossless binary checkpoints.
//!
//! Layout: magic, format version (u32 LE), JSON header length (u64 LE), JSON
//! header, then one entry per tensor in [`ModelParams::tensors`] order:
//! name length (u32), name, rank (u32), dims (u64 each), raw f64 LE values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Hyperparams, ModelParams};
use super::score::Ablation;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RXFEWCK\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub hyper: Hyperparams,
    pub ablation: Ablation,
    /// Vocabulary code ids in embedding-row order.
    pub codes: Vec<String>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in self.params.tensors() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = read_u64(&mut r)? as usize;
        if header_len > r.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let meta: CheckpointMeta =
            serde_json::from_slice(&r[..header_len]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        r = &r[header_len..];
        meta.hyper.validate()?;
        let mut params = ModelParams::zeros(&meta.hyper, meta.codes.len());
        for (name, t) in params.tensors_mut() {
            let n = read_u32(&mut r)? as usize;
            let mut got = vec![0u8; n];
            read_exact(&mut r, &mut got)?;
            if got != name.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "expected tensor `{name}`, found `{}`",
                    String::from_utf8_lossy(&got)
                )));
            }
            let rank = read_u32(&mut r)? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<_>>()?;
            if shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {shape:?}, expected {:?}",
                    t.shape()
                )));
            }
            for x in t.data_mut() {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                *x = f64::from_le_bytes(b);
            }
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the checkpoint's embedding rows line up with `vocab`.
    pub fn check_vocabulary(&self, vocab: &crate::knowledge::Vocabulary) -> Result<()> {
        let same = self.meta.codes.len() == vocab.len()
            && self.meta.codes.iter().zip(vocab.codes()).all(|(a, b)| *a == b.id);
        if same {
            Ok(())
        } else {
            Err(Error::Checkpoint("vocabulary differs from the loaded assets".into()))
        }
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
