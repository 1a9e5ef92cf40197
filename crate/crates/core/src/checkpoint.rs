//! `PSCK` parameter files.
//!
//! Layout (all little-endian): magic `PSCK`, `u32` tensor count, then per
//! tensor a `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u32`
//! extents and the `f32` values in row-major order. A trailing `u32` CRC-32
//! covers every byte between the magic and the checksum.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSCK";

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(format!("checkpoint: {}", msg.into()))
}

pub fn encode(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let count = u32::try_from(params.len()).map_err(|_| fmt_err("too many tensors"))?;
    body.extend_from_slice(&count.to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| fmt_err(format!("name too long: {name}")))?;
        body.extend_from_slice(&len.to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| fmt_err(format!("{name}: rank too large")))?;
        body.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| fmt_err(format!("{name}: extent too large")))?;
            body.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| fmt_err("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint. Loaded tensors are not marked trainable.
pub fn decode(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let body = &bytes[4..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(fmt_err(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    let count = r.u32()? as usize;
    let mut params = ModelParams::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| fmt_err("name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(fmt_err(format!("duplicate tensor {name}")));
        }
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fmt_err(format!("{name}: extent overflow")))?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::from_vec(shape, data)?)?;
    }
    if r.pos != body.len() {
        return Err(fmt_err(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(params)
}

pub fn write(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    fs::write(path, encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams<f32> {
        let mut p = ModelParams::new();
        p.insert("a.weight", Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, 9.0]).unwrap()).unwrap();
        p.insert("b", Tensor::scalar(0.25)).unwrap();
        p
    }

    #[test]
    fn layout_and_round_trip() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"PSCK");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        // name len 8, name, rank 2, extents, values
        assert_eq!(&bytes[8..10], &8u16.to_le_bytes());
        assert_eq!(&bytes[10..18], b"a.weight");
        assert_eq!(bytes[18], 2);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back).unwrap(), bytes);
        assert_eq!(back.get("a.weight").unwrap().data(), sample().get("a.weight").unwrap().data());
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[20] ^= 1;
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
        assert!(decode(b"XXXX\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let one = encode(&{
            let mut p = ModelParams::new();
            p.insert("x", Tensor::scalar(1.0f32)).unwrap();
            p
        })
        .unwrap();
        // splice the single record twice
        let record = &one[8..one.len() - 4];
        let mut body = 2u32.to_le_bytes().to_vec();
        body.extend_from_slice(record);
        body.extend_from_slice(record);
        let mut bytes = b"PSCK".to_vec();
        bytes.extend_from_slice(&body);
        bytes.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        assert!(decode(&bytes).unwrap_err().to_string().contains("duplicate"));
    }
}
