//! Netpbm image files and small text helpers.

use std::fs;
use std::path::Path;

use crate::render::DepthImage;
use crate::{Error, Real, Result};

/// Binary 16-bit PGM with depth in millimeters.
pub fn encode_pgm16<T: Real>(depth: &DepthImage<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for &d in &depth.data {
        out.extend_from_slice(&depth_to_mm(d).to_be_bytes());
    }
    out
}

pub fn depth_to_mm<T: Real>(d: T) -> u16 {
    (d.as_f64() * 1000.0).round().clamp(0.0, 65535.0) as u16
}

pub fn decode_pgm16<T: Real>(bytes: &[u8]) -> Result<DepthImage<T>> {
    let bad = |m: &str| Error::Data(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("expected binary graymap (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 65535 {
        return Err(bad("expected 16-bit samples"));
    }
    let body = bytes.get(pos..).ok_or_else(|| bad("missing pixels"))?;
    if body.len() != w * h * 2 {
        return Err(bad("pixel payload length mismatch"));
    }
    let data = body
        .chunks_exact(2)
        .map(|c| T::c(u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0))
        .collect();
    Ok(DepthImage { width: w, height: h, data })
}

pub fn write_pgm16<T: Real>(path: impl AsRef<Path>, depth: &DepthImage<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm16(depth)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm16<T: Real>(path: impl AsRef<Path>) -> Result<DepthImage<T>> {
    let path = path.as_ref();
    decode_pgm16(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Binary 8-bit RGB PPM.
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[[u8; 3]]) -> Result<()> {
    let path = path.as_ref();
    assert_eq!(rgb.len(), width * height);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_in_millimeters() {
        let img = DepthImage { width: 3, height: 2, data: vec![0.0, 1.2345, 0.5, 2.0, 0.0, 0.001] };
        let back: DepthImage<f64> = decode_pgm16(&encode_pgm16(&img)).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.0005 + 1e-12);
        }
        assert!(decode_pgm16::<f64>(b"P2\n1 1\n255\n0").is_err());
    }
}
