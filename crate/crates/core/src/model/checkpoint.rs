//! "NCPT v1" checkpoints: named f64 tensors with a trailing CRC32.
//!
//! Layout (little-endian): magic `NCPT`, u8 version, u32 tensor count; per
//! tensor u16 name length, UTF-8 name, u8 rank, u32 dims, f64 values.

use std::fs;
use std::path::Path;

use super::{ArchConfig, Block, ModelParams};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAGIC: [u8; 4] = *b"NCPT";
pub const VERSION: u8 = 1;
const WHAT: &str = "NCPT";

pub fn encode_checkpoint<R: Real>(params: &ModelParams<R>) -> Vec<u8> {
    let arch = params.arch();
    let mut buf = Vec::with_capacity(64 + params.num_params() * 8);
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(Block::ALL.len() as u32).to_le_bytes());
    for (block, values) in params.blocks() {
        let name = block.name().as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        let shape = block.shape(arch);
        buf.push(shape.len() as u8);
        for d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                what: WHAT,
                expected: self.pos.saturating_add(n) + 4,
                actual: self.bytes.len() + 4,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint; the architecture is recovered from tensor shapes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams<f64>> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            what: WHAT,
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < 4 + 1 + 4 + 4 {
        return Err(Error::Truncated {
            what: WHAT,
            expected: 13,
            actual: bytes.len(),
        });
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let mut cur = Cursor {
        bytes: body,
        pos: 4,
    };
    let version = cur.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { what: WHAT, version });
    }
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            what: WHAT,
            stored,
            computed,
        });
    }
    let count = cur.u32()? as usize;
    let mut found: Vec<Option<(Vec<usize>, Vec<f64>)>> = vec![None; Block::ALL.len()];
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?).map_err(|_| Error::Malformed {
            what: WHAT,
            detail: "tensor name is not UTF-8".into(),
        })?;
        let block = Block::from_name(name).ok_or_else(|| Error::Malformed {
            what: WHAT,
            detail: format!("unknown tensor `{name}`"),
        })?;
        let rank = cur.u8()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let raw = cur.take(len.checked_mul(8).ok_or_else(|| Error::Malformed {
            what: WHAT,
            detail: "tensor too large".into(),
        })?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        found[block as usize] = Some((dims, values));
    }
    if cur.pos != body.len() {
        return Err(Error::Malformed {
            what: WHAT,
            detail: "trailing bytes before checksum".into(),
        });
    }
    let missing = |b: Block| Error::Malformed {
        what: WHAT,
        detail: format!("missing tensor `{b}`"),
    };
    let dims_of = |b: Block| {
        found[b as usize]
            .as_ref()
            .map(|(d, _)| d.clone())
            .ok_or_else(|| missing(b))
    };
    let c1 = dims_of(Block::Conv1Weight)?;
    let c2 = dims_of(Block::Conv2Weight)?;
    let head = dims_of(Block::PccWeight)?;
    if c1.len() != 4 || c2.len() != 4 || head.len() != 2 {
        return Err(Error::Malformed {
            what: WHAT,
            detail: "unexpected tensor rank".into(),
        });
    }
    let arch = ArchConfig {
        conv1: c1[0],
        conv2: c2[0],
        num_classes: head[0],
    };
    arch.validate().map_err(|e| Error::Malformed {
        what: WHAT,
        detail: e.to_string(),
    })?;
    let mut tensors: [Vec<f64>; 8] = Default::default();
    for b in Block::ALL {
        let (dims, values) = found[b as usize].take().ok_or_else(|| missing(b))?;
        if dims != b.shape(&arch) {
            return Err(Error::Malformed {
                what: WHAT,
                detail: format!("{b} has shape {dims:?}, expected {:?}", b.shape(&arch)),
            });
        }
        tensors[b as usize] = values;
    }
    ModelParams::from_blocks(arch, tensors)
}

pub fn save_checkpoint<R: Real>(params: &ModelParams<R>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
