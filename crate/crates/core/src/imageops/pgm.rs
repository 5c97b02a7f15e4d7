//! 8-bit binary PGM (P5) encoding.
//!
//! Intensities map linearly between `[0, 1]` and `[0, 255]`, rounding to the
//! nearest level when writing. Masks are written as `{0, 255}`.

use std::path::Path;

use super::{GrayImage, Mask};
use crate::error::{Error, Result};

pub fn encode(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    encode(&mask.to_image())
}

pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(parse_error(0, "not a binary PGM (expected P5)"));
    }
    let width = number(bytes, &mut pos)?;
    let height = number(bytes, &mut pos)?;
    let maxval = number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(parse_error(pos, "only 8-bit PGM is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let len = width * height;
    let raster = bytes
        .get(pos..pos + len)
        .ok_or_else(|| parse_error(bytes.len(), "raster shorter than width*height"))?;
    let scale = maxval as f64;
    GrayImage::new(width, height, raster.iter().map(|&b| f64::from(b) / scale).collect())
}

/// Reads only the header and returns `(width, height)`.
pub fn dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != b"P5" {
        return Err(parse_error(0, "not a binary PGM (expected P5)"));
    }
    Ok((number(bytes, &mut pos)?, number(bytes, &mut pos)?))
}

pub fn read(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_error(start, "truncated PGM header"));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let start = *pos;
    let tok = token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_error(start, "expected a decimal number in PGM header"))
}

fn parse_error(offset: usize, message: &str) -> Error {
    Error::Parse {
        offset,
        message: message.to_string(),
    }
}
