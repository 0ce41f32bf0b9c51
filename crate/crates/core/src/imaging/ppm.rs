//! Binary PPM (P6, 8-bit).

use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_rgb8());
    out
}

/// Parses a P6 file. Header comments are allowed; maxval must be 1..=255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Image("non-ASCII PPM header".into()))?);
    }
    if fields[0] != "P6" {
        return Err(Error::Image(format!("unsupported image format `{}` (expected binary PPM P6)", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Image(format!("invalid PPM {what} `{s}`")))
    };
    let (width, height, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if !(1..=255).contains(&maxval) {
        return Err(Error::Image(format!("PPM maxval {maxval} is not 8-bit")));
    }
    if width == 0 || height == 0 || width.saturating_mul(height) > 1 << 28 {
        return Err(Error::Image(format!("unsupported PPM size {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| Error::Image("truncated PPM raster".into()))?;
    let scale = maxval as f32;
    Image::new(height, width, raster.iter().map(|&b| b as f32 / scale).collect())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}
