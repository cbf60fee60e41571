//! Versioned binary weight checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "RLFQNET\0"
//! version    u32       1
//! inputs     u32
//! embed      u32
//! units      u32
//! actions    u32
//! blocks     u32       7
//! per block: rows u32, cols u32, rows*cols f64 (row-major)
//! crc32      u32       CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Blocks follow the order documented on [`QNetwork`](super::QNetwork).

use std::path::Path;

use super::network::{QNetDims, QNetwork};
use crate::Error;

const MAGIC: &[u8; 8] = b"RLFQNET\0";
const VERSION: u32 = 1;

pub fn encode(net: &QNetwork) -> Vec<u8> {
    let d = net.dims();
    let mut out = Vec::with_capacity(64 + 8 * net.params().len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, d.inputs as u32, d.embed as u32, d.units as u32, d.actions as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let blocks = d.blocks();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (_, off, rows, cols) in blocks {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for p in &net.params()[off..off + rows * cols] {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(data: &[u8]) -> Result<QNetwork, String> {
    if data.len() < 40 || &data[..8] != MAGIC {
        return Err("not a checkpoint".into());
    }
    let (body, tail) = data.split_at(data.len() - 4);
    let crc = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != crc {
        return Err("checksum mismatch".into());
    }
    let mut pos = 8;
    let u32_at = |pos: &mut usize| -> Result<u32, String> {
        let b = body.get(*pos..*pos + 4).ok_or("truncated")?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let version = u32_at(&mut pos)?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let dims = QNetDims {
        inputs: u32_at(&mut pos)? as usize,
        embed: u32_at(&mut pos)? as usize,
        units: u32_at(&mut pos)? as usize,
        actions: u32_at(&mut pos)? as usize,
    };
    let nblocks = u32_at(&mut pos)? as usize;
    let expected = dims.blocks();
    if nblocks != expected.len() {
        return Err(format!("{nblocks} blocks, expected {}", expected.len()));
    }
    let mut params = vec![0.0; dims.param_count()];
    for (name, off, rows, cols) in expected {
        let (r, c) = (u32_at(&mut pos)? as usize, u32_at(&mut pos)? as usize);
        if (r, c) != (rows, cols) {
            return Err(format!("block {name} is {r}x{c}, expected {rows}x{cols}"));
        }
        let n = rows * cols;
        let raw = body.get(pos..pos + 8 * n).ok_or("truncated")?;
        for (p, chunk) in params[off..off + n].iter_mut().zip(raw.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        pos += 8 * n;
    }
    if pos != body.len() {
        return Err("trailing bytes".into());
    }
    QNetwork::from_params(dims, params).map_err(|e| e.to_string())
}

pub fn save(net: &QNetwork, path: &Path) -> Result<(), Error> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<QNetwork, Error> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}
