//! Binary 8-bit PGM (P5) and PPM (P6).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(format!("pnm: {}", msg.into()))
}

/// Reads header tokens, skipping `#` comments. Returns tokens and the
/// offset of the byte after the single whitespace that ends the header.
fn header(bytes: &[u8]) -> Result<([usize; 3], bool, usize)> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'5' || bytes[1] == b'6') {
        return Err(bad("expected P5 or P6 magic"));
    }
    let color = bytes[1] == b'6';
    let mut pos = 2;
    let mut vals = [0usize; 3];
    for slot in &mut vals {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?;
        *slot = tok.parse().map_err(|_| bad(format!("bad header token `{tok}`")))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("missing header terminator"));
    }
    Ok((vals, color, pos + 1))
}

/// Decodes into a `3×H×W` tensor in `[0, 1]`; grayscale is replicated.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let ([w, h, maxval], color, offset) = header(bytes)?;
    if w == 0 || h == 0 {
        return Err(bad("zero extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("only 8-bit maxval supported, got {maxval}")));
    }
    let channels = if color { 3 } else { 1 };
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad("extent overflow"))?;
    let payload = &bytes[offset..];
    if payload.len() < need {
        return Err(bad(format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    let scale = 1.0 / maxval as f32;
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            let src = if color { payload[i * 3 + c] } else { payload[i] };
            data[c * plane + i] = (src as f32 * scale).min(1.0);
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a grayscale PGM from a `C×H×W` tensor (channel mean).
pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = image.chw()?;
    let plane = h * w;
    let gray: Vec<u8> = (0..plane)
        .map(|i| {
            let s: f32 = (0..c).map(|ch| image.data()[ch * plane + i]).sum();
            quantize(s / c as f32)
        })
        .collect();
    write_gray_bytes(path, h, w, &gray)
}

pub fn write_gray_bytes(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a colour PPM from a `3×H×W` tensor.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(bad("PPM needs 3 channels"));
    }
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..plane {
        for ch in 0..3 {
            out.push(quantize(image.data()[ch * plane + i]));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_with_comment_replicates_gray() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let t = decode(&bytes).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let data: Vec<f32> = (0..3 * 4 * 5).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = Tensor::from_vec(vec![3, 4, 5], data).unwrap();
        write_ppm(&path, &img).unwrap();
        let back = read_rgb(&path).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode(b"P3\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
