//! Chemical map raster.
//!
//! File layout mirrors the cube format with a single band:
//! `CHM1 <height> <width>\n` followed by little-endian `f32` values,
//! row-major. The paired mask is stored separately as an `MSK1` file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::hsidata::io::{decode_f32, encode_f32, parse_dim, read_bytes, split_header, write_bytes};
use crate::hsidata::Mask;

pub const MAP_MAGIC: &str = "CHM1";

/// Predicted concentration (%) per pixel with the mask it is valid on.
/// Pixels just outside the mask may hold predictions too (the unit-lag
/// variogram reads them); everything else is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ChemicalMap {
    pub values: Vec<f64>,
    pub mask: Mask,
}

/// Pixels read by unit-lag forward differences from masked base pixels:
/// the mask plus the pixel below and the pixel right of each masked one.
pub fn difference_support(mask: &Mask) -> Mask {
    Mask::from_fn(mask.height(), mask.width(), |r, c| {
        mask.get(r, c) || (r > 0 && mask.get(r - 1, c)) || (c > 0 && mask.get(r, c - 1))
    })
}

impl ChemicalMap {
    pub fn new(values: Vec<f64>, mask: Mask) -> Result<Self> {
        if values.len() != mask.height() * mask.width() {
            return Err(Error::shape(format!(
                "{} map values for a {}x{} mask",
                values.len(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self { values, mask })
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width() + col]
    }

    /// Mean over foreground pixels.
    pub fn masked_mean(&self) -> Result<f64> {
        let (sum, count) = self.masked_sum();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(sum / count as f64)
    }

    /// Sum and count over foreground pixels.
    pub fn masked_sum(&self) -> (f64, usize) {
        self.values
            .iter()
            .zip(self.mask.values())
            .filter(|(_, &m)| m != 0)
            .fold((0.0, 0), |(s, c), (v, _)| (s + v, c + 1))
    }

    /// Masked values, row-major.
    pub fn foreground(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.mask.values())
            .filter(|(_, &m)| m != 0)
            .map(|(v, _)| *v)
            .collect()
    }
}

pub fn encode_map(map: &ChemicalMap) -> Vec<u8> {
    let mut out = format!("{MAP_MAGIC} {} {}\n", map.height(), map.width()).into_bytes();
    let values: Vec<f32> = map.values.iter().map(|&v| v as f32).collect();
    encode_f32(&mut out, &values);
    out
}

/// Decodes map values; the mask must be supplied separately.
pub fn decode_map_values(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let (fields, payload) = split_header(bytes, MAP_MAGIC)?;
    if fields.len() != 3 {
        return Err(Error::Header(format!("map header has {} fields, expected 3", fields.len())));
    }
    let h = parse_dim(fields.get(1), "height")?;
    let w = parse_dim(fields.get(2), "width")?;
    if payload.len() != h * w * 4 {
        return Err(Error::SizeMismatch { expected: h * w * 4, found: payload.len() });
    }
    let values: Vec<f64> = decode_f32(payload).into_iter().map(f64::from).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok((h, w, values))
}

pub fn write_map(map: &ChemicalMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_map(map))
}

pub fn read_map(path: impl AsRef<Path>, mask: Mask) -> Result<ChemicalMap> {
    let (h, w, values) = decode_map_values(&read_bytes(path.as_ref())?)?;
    if (h, w) != (mask.height(), mask.width()) {
        return Err(Error::shape(format!(
            "map {h}x{w} vs mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    ChemicalMap::new(values, mask)
}
