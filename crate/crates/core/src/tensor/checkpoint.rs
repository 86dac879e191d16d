//! Flat binary weights: `LVT1`, then per parameter (sorted by name) a u32 name
//! length, the UTF-8 name, a u32 rank, u64 extents and the f64 payload, all
//! little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LVT1";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &BTreeMap<String, Tensor>,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, params: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Option<&'b [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R, origin: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io(origin, e))?;
    let bad = |msg: &str| Error::format(origin, msg);
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(bad("missing LVT1 magic"));
    }
    let mut c = Cursor {
        bytes: &bytes,
        pos: 4,
    };
    let mut out = BTreeMap::new();
    while c.pos < bytes.len() {
        let len = c.u32().ok_or_else(|| bad("truncated name length"))? as usize;
        let name = c.take(len).ok_or_else(|| bad("truncated name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        let rank = c.u32().ok_or_else(|| bad("truncated rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64().ok_or_else(|| bad("truncated extents"))? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| bad("extent overflow"))?;
        let payload = c
            .take(n.checked_mul(8).ok_or_else(|| bad("extent overflow"))?)
            .ok_or_else(|| bad(&format!("truncated payload for {name}")))?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(bad(&format!("duplicate parameter {name}")));
        }
    }
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f), path)
}
