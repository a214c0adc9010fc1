//! Versioned binary checkpoints: magic bytes, format version, a config
//! echo, then named parameter blocks as little-endian f64. Saving is
//! byte-stable across save/load/save cycles.

use std::fs;
use std::path::Path;

use crate::cli::pnm::atomic_write;
use crate::error::{Error, Result};
use crate::tensor::Shape;

const MAGIC: &[u8; 8] = b"SANETCP\x01";
const VERSION: u32 = 1;

pub struct CheckpointEntry {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl CheckpointEntry {
    pub fn scalar(name: &str, value: f64) -> CheckpointEntry {
        CheckpointEntry {
            name: name.to_string(),
            shape: Shape::new(1, 1, 1, 1),
            data: vec![value],
        }
    }
}

pub fn save_checkpoint(path: &Path, config_text: &str, entries: &[CheckpointEntry]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_text.as_bytes();
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(cfg);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name);
        for ext in [e.shape.n, e.shape.c, e.shape.h, e.shape.w] {
            out.extend_from_slice(&(ext as u64).to_le_bytes());
        }
        debug_assert_eq!(e.data.len(), e.shape.numel());
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Load("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<CheckpointEntry>)> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Load(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Load(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u64()? as usize;
    let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|_| Error::Load("checkpoint config is not UTF-8".into()))?;
    let count = r.u64()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u64()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Load("checkpoint entry name is not UTF-8".into()))?;
        let n = r.u64()? as usize;
        let c = r.u64()? as usize;
        let h = r.u64()? as usize;
        let w = r.u64()? as usize;
        let shape = Shape::new(n, c, h, w);
        let numel = shape.checked_numel()?;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        entries.push(CheckpointEntry { name, shape, data });
    }
    Ok((config_text, entries))
}
