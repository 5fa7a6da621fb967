//! On-disk raster formats.
//!
//! Fringe images are binary PGM (`P5`, maxval 255). Float rasters use a
//! minimal little-endian container:
//!
//! ```text
//! b"F32R" | u32 width | u32 height | width*height f32, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fringe::FringeImage;

const F32R_MAGIC: &[u8; 4] = b"F32R";

/// Round-half-up quantization of a normalized intensity to 0..=255.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(q: u8) -> f64 {
    q as f64 / 255.0
}

/// Snaps an image onto the 8-bit grid without touching disk.
pub fn quantize_image(image: &FringeImage) -> FringeImage {
    let data = image.data().iter().map(|v| dequantize(quantize(*v))).collect();
    FringeImage::new(image.width(), image.height(), data).expect("quantized values stay in range")
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary 8-bit PGM, returning `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (width, height, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-sized PGM"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let end = pos + width * height;
    if bytes.len() < end {
        return Err(bad("truncated PGM raster"));
    }
    Ok((width, height, bytes[pos..end].to_vec()))
}

pub fn write_pgm(path: &Path, image: &FringeImage) -> Result<()> {
    let pixels: Vec<u8> = image.data().iter().map(|v| quantize(*v)).collect();
    write_bytes(path, &encode_pgm(image.width(), image.height(), &pixels))
}

pub fn read_pgm(path: &Path) -> Result<FringeImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, px) = decode_pgm(&bytes, path)?;
    FringeImage::new(w, h, px.into_iter().map(dequantize).collect())
}

/// A float raster as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatRaster {
    pub fn from_f64(width: usize, height: usize, data: &[f64]) -> Self {
        Self {
            width,
            height,
            data: data.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(F32R_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != F32R_MAGIC {
            return Err(Error::format(path, "missing F32R magic"));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() != 4 * width * height {
            return Err(Error::format(
                path,
                format!("expected {} data bytes, found {}", 4 * width * height, body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

/// Linear min-max mapping of finite values onto 0..=255; non-finite pixels become 0.
///
/// Returns the pixels and the `(min, max)` that maps to `(0, 255)`.
pub fn visualize(data: &[f64]) -> (Vec<u8>, (f64, f64)) {
    let (lo, hi) = data
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    if !lo.is_finite() {
        return (vec![0; data.len()], (0.0, 0.0));
    }
    let span = hi - lo;
    let px = data
        .iter()
        .map(|v| {
            if !v.is_finite() {
                0
            } else if span > 0.0 {
                quantize((v - lo) / span)
            } else {
                0
            }
        })
        .collect();
    (px, (lo, hi))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128); // 127.5 rounds up
        assert_eq!(quantize(1.49 / 255.0), 1);
        assert_eq!(quantize(1.5 / 255.0), 2);
    }

    #[test]
    fn pgm_header_with_comment() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x07\xff";
        let (w, h, px) = decode_pgm(bytes, Path::new("x.pgm")).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(px, vec![7, 255]);
    }

    #[test]
    fn pgm_rejects_ascii_and_truncation() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0", Path::new("a")).is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00", Path::new("a")).is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00", Path::new("a")).is_err());
    }

    #[test]
    fn f32r_rejects_bad_length() {
        let mut bytes = FloatRaster {
            width: 2,
            height: 2,
            data: vec![1.0; 4],
        }
        .encode();
        bytes.pop();
        assert!(FloatRaster::decode(&bytes, Path::new("r")).is_err());
        assert!(FloatRaster::decode(b"NOPE", Path::new("r")).is_err());
    }

    #[test]
    fn visualization_hits_both_ends() {
        let (px, range) = visualize(&[-2.0, 0.0, f64::NAN, 6.0]);
        assert_eq!(px, vec![0, 64, 0, 255]);
        assert_eq!(range, (-2.0, 6.0));
    }

    proptest! {
        #[test]
        fn pgm_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let px: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let enc = encode_pgm(w, h, &px);
            let (dw, dh, dpx) = decode_pgm(&enc, Path::new("p")).unwrap();
            prop_assert_eq!((dw, dh), (w, h));
            prop_assert_eq!(dpx, px);
        }

        #[test]
        fn f32r_round_trip(data in proptest::collection::vec(any::<f32>(), 6)) {
            let r = FloatRaster { width: 3, height: 2, data };
            let back = FloatRaster::decode(&r.encode(), Path::new("r")).unwrap();
            prop_assert_eq!(
                back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
