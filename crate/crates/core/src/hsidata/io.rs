//! Binary cube and mask files.
//!
//! Cube: one ASCII header line `HSC1 <bands> <height> <width> <space>\n`,
//! then `bands*height*width` little-endian `f32` values in (band, row, col)
//! order, then `bands` little-endian `f32` wavelengths.
//!
//! Mask: `MSK1 <height> <width>\n` followed by one byte (0 or 1) per pixel,
//! row-major.

use std::fs;
use std::path::Path;

use super::{HsiCube, Mask, Space};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &str = "HSC1";
pub const MASK_MAGIC: &str = "MSK1";

/// Splits `bytes` into its header fields and payload, checking the magic.
pub(crate) fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(Vec<&'a str>, &'a [u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("missing header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Header("header is not utf-8".into()))?;
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    let found = fields.first().copied().unwrap_or("");
    if found != magic {
        let family = &magic[..magic.len() - 1];
        if found.len() == magic.len() && found.starts_with(family) {
            return Err(Error::Version(found.to_string()));
        }
        return Err(Error::Header(format!("expected magic {magic}, found `{found}`")));
    }
    Ok((fields, &bytes[nl + 1..]))
}

pub(crate) fn parse_dim(field: Option<&&str>, name: &str) -> Result<usize> {
    field
        .ok_or_else(|| Error::Header(format!("missing {name}")))?
        .parse::<usize>()
        .map_err(|_| Error::Header(format!("invalid {name}")))
}

pub(crate) fn decode_f32(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn encode_f32(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut out = format!(
        "{CUBE_MAGIC} {} {} {} {}\n",
        cube.bands(),
        cube.height(),
        cube.width(),
        cube.space()
    )
    .into_bytes();
    encode_f32(&mut out, cube.values());
    encode_f32(&mut out, cube.wavelengths());
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    let (fields, payload) = split_header(bytes, CUBE_MAGIC)?;
    if fields.len() != 5 {
        return Err(Error::Header(format!("cube header has {} fields, expected 5", fields.len())));
    }
    let bands = parse_dim(fields.get(1), "bands")?;
    let height = parse_dim(fields.get(2), "height")?;
    let width = parse_dim(fields.get(3), "width")?;
    let space: Space = fields[4].parse()?;
    let expected = (bands * height * width + bands) * 4;
    if payload.len() != expected {
        return Err(Error::SizeMismatch { expected, found: payload.len() });
    }
    let n = bands * height * width;
    let values = decode_f32(&payload[..n * 4]);
    let wavelengths = decode_f32(&payload[n * 4..]);
    HsiCube::new(bands, height, width, values, wavelengths, space)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    decode_cube(&read_bytes(path.as_ref())?)
}

pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_cube(cube))
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("{MASK_MAGIC} {} {}\n", mask.height(), mask.width()).into_bytes();
    out.extend_from_slice(mask.values());
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let (fields, payload) = split_header(bytes, MASK_MAGIC)?;
    if fields.len() != 3 {
        return Err(Error::Header(format!("mask header has {} fields, expected 3", fields.len())));
    }
    let height = parse_dim(fields.get(1), "height")?;
    let width = parse_dim(fields.get(2), "width")?;
    if payload.len() != height * width {
        return Err(Error::SizeMismatch { expected: height * width, found: payload.len() });
    }
    Mask::new(height, width, payload.to_vec())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    decode_mask(&read_bytes(path.as_ref())?)
}

pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(mask))
}
