//! `DMF1` density raster files.
//!
//! Layout: magic `DMF1`, height and width as little-endian `u32`, then
//! `height·width` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RASTER_MAGIC: &[u8; 4] = b"DMF1";

#[derive(Debug, Clone, PartialEq)]
pub struct DensityRaster {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DensityRaster {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Format(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    /// From a `1×H×W` density tensor.
    pub fn from_density(d: &Tensor<f32>) -> Result<Self> {
        let (c, h, w) = d.chw()?;
        if c != 1 {
            return Err(Error::Format(format!("density must have 1 channel, got {c}")));
        }
        Self::new(h, w, d.data().to_vec())
    }

    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        Tensor::from_vec(vec![1, self.height, self.width], self.values.clone())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let h = u32::try_from(self.height).map_err(|_| Error::Format("height exceeds u32".into()))?;
        let w = u32::try_from(self.width).map_err(|_| Error::Format("width exceeds u32".into()))?;
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(RASTER_MAGIC);
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format("raster: truncated header".into()));
        }
        if &bytes[..4] != RASTER_MAGIC {
            return Err(Error::Format("raster: bad magic".into()));
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("raster: extent overflow".into()))?;
        let body = &bytes[12..];
        if body.len() != payload {
            return Err(Error::Format(format!(
                "raster: payload is {} bytes, expected {payload}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(h, w, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// 8-bit visualization scaled so the maximum maps to 255.
    pub fn visualization(&self) -> Vec<u8> {
        let max = self.values.iter().cloned().fold(0.0f32, f32::max);
        if max <= 0.0 {
            return vec![0; self.values.len()];
        }
        self.values
            .iter()
            .map(|&v| ((v.max(0.0) / max) * 255.0).round() as u8)
            .collect()
    }
}
