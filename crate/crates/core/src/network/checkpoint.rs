//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TFVCKPT\0"
//! version    u32      CHECKPOINT_VERSION
//! hdr_len    u32
//! header     hdr_len bytes of JSON: {"format_version", "config", "tensors": [[name, len], ...]}
//! count      u64      total number of f64 values
//! values     count * f64, tensors in `Params::tensors` order, row-major
//! ```
//!
//! The token embedding is stored once; the masked-token head has no
//! tensor of its own.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TFVCKPT\0";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<(String, usize)>,
}

pub fn write_checkpoint<W: Write>(params: &Params, mut out: W) -> std::io::Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        tensors: params.tensors().iter().map(|(n, _, t)| (n.clone(), t.len())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&(params.num_params() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.num_params() * 8);
    for (_, _, t) in params.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Params> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| bad(format!("read failed: {e}")))?;
    let take = |range: std::ops::Range<usize>| bytes.get(range).ok_or_else(|| bad("truncated file"));
    if take(0..8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(8..12)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hdr_len = u32::from_le_bytes(take(12..16)?.try_into().unwrap()) as usize;
    let header: Header =
        serde_json::from_slice(take(16..16 + hdr_len)?).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;
    let mut params = Params::zeros(&header.config);
    let expected: Vec<(String, usize)> = params.tensors().iter().map(|(n, _, t)| (n.clone(), t.len())).collect();
    if expected != header.tensors {
        return Err(bad("tensor list does not match the configuration"));
    }
    let mut off = 16 + hdr_len;
    let count = u64::from_le_bytes(take(off..off + 8)?.try_into().unwrap()) as usize;
    off += 8;
    if count != params.num_params() || bytes.len() != off + 8 * count {
        return Err(bad("value count mismatch"));
    }
    for (_, _, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &Params, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Params> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
