//! Binary checkpoint and anomaly-map formats.
//!
//! Checkpoint: `STLMCKPT`, u32 version, u32 count, then per tensor a u32
//! name length, the UTF-8 name, u32 rank, u32 dims and the row-major f32
//! payload. Map: `STLMMAP0`, u32 height, u32 width, row-major f32. All
//! integers and floats are little-endian.

use std::path::Path;

use stlm_core::model::ParamStore;
use stlm_core::Tensor;

use crate::error::{IoContext, Result, StlmError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MAP_MAGIC: &[u8; 8] = b"STLMMAP0";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("extent fits in u32").to_le_bytes());
}

pub fn encode_checkpoint<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Vec<u8> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("payload size overflows")?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Decodes a checkpoint, preserving the on-disk tensor order.
pub fn decode_checkpoint(buf: &[u8]) -> std::result::Result<Vec<(String, Tensor<f32>)>, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = r.u32()?;
    let mut out: Vec<(String, Tensor<f32>)> = Vec::with_capacity(count.min(1 << 16));
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?.to_string();
        if !seen.insert(name.clone()) {
            return Err(format!("duplicate tensor `{name}`"));
        }
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor size overflows")?;
        let data = r.f32s(n)?;
        let t = Tensor::new(&dims, data).map_err(|e| format!("`{name}`: {e}"))?;
        out.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    let bytes = encode_checkpoint(store.iter().map(|(k, v)| (k.as_str(), v)));
    std::fs::write(path, bytes).at(path)
}

pub fn read_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    let bytes = std::fs::read(path).at(path)?;
    let tensors = decode_checkpoint(&bytes).map_err(|e| StlmError::format(path, e))?;
    let mut store = ParamStore::new();
    for (k, v) in tensors {
        store.insert(k, v);
    }
    Ok(store)
}

pub fn encode_map(height: usize, width: usize, scores: &[f32]) -> Vec<u8> {
    assert_eq!(scores.len(), height * width, "map extent");
    let mut out = Vec::with_capacity(16 + 4 * scores.len());
    out.extend_from_slice(MAP_MAGIC);
    put_u32(&mut out, height);
    put_u32(&mut out, width);
    for v in scores {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_map(buf: &[u8]) -> std::result::Result<(usize, usize, Vec<f32>), String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAP_MAGIC {
        return Err("not an anomaly map (bad magic)".into());
    }
    let (h, w) = (r.u32()?, r.u32()?);
    let data = r.f32s(h.checked_mul(w).ok_or("map size overflows")?)?;
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok((h, w, data))
}

/// Score to 16-bit gray level: `round(clamp(s, 0, 1) · 65535)`.
pub fn map_level(score: f32) -> u16 {
    (score.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn write_map_png(path: &Path, height: usize, width: usize, scores: &[f32]) -> Result<()> {
    let levels: Vec<u16> = scores.iter().map(|&s| map_level(s)).collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width as u32, height as u32, levels)
        .ok_or_else(|| StlmError::format(path, "map extent does not match its data"))?;
    img.save(path).map_err(|e| StlmError::format(path, e.to_string()))
}

pub fn write_map_raw(path: &Path, height: usize, width: usize, scores: &[f32]) -> Result<()> {
    std::fs::write(path, encode_map(height, width, scores)).at(path)
}
