use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Radiometric space of the cube values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Reflectance,
    Absorbance,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Reflectance => f.write_str("reflectance"),
            Space::Absorbance => f.write_str("absorbance"),
        }
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reflectance" => Ok(Space::Reflectance),
            "absorbance" => Ok(Space::Absorbance),
            other => Err(Error::Header(format!("unknown space tag `{other}`"))),
        }
    }
}

/// A hyperspectral image: one spectrum per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    bands: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    wavelengths: Vec<f32>,
    space: Space,
}

impl HsiCube {
    pub fn new(
        bands: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        wavelengths: Vec<f32>,
        space: Space,
    ) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "cube dimensions must be positive, got {bands}x{height}x{width}"
            )));
        }
        if values.len() != bands * height * width {
            return Err(Error::shape(format!(
                "{} values for a {bands}x{height}x{width} cube",
                values.len()
            )));
        }
        if wavelengths.len() != bands {
            return Err(Error::shape(format!(
                "{} wavelengths for {bands} bands",
                wavelengths.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("wavelengths must be strictly increasing"));
        }
        if space == Space::Reflectance && values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("reflectance values must be non-negative"));
        }
        Ok(Self { bands, height, width, values, wavelengths, space })
    }

    /// Cube filled from a closure over `(band, row, col)`.
    pub fn from_fn(
        bands: usize,
        height: usize,
        width: usize,
        wavelengths: Vec<f32>,
        space: Space,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(bands * height * width);
        for b in 0..bands {
            for r in 0..height {
                for c in 0..width {
                    values.push(f(b, r, c));
                }
            }
        }
        Self::new(bands, height, width, values, wavelengths, space)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn wavelengths(&self) -> &[f32] {
        &self.wavelengths
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.values[(band * self.height + row) * self.width + col]
    }

    /// Spectrum of one pixel, widened to `f64`.
    pub fn pixel_spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        let plane = self.height * self.width;
        let offset = row * self.width + col;
        (0..self.bands).map(|b| self.values[b * plane + offset] as f64).collect()
    }

    /// Band plane `band` as a row-major slice.
    pub fn band_plane(&self, band: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.values[band * plane..(band + 1) * plane]
    }

    /// `-log10(max(R, epsilon))` per value.
    pub fn to_absorbance(&self, epsilon: f64) -> Result<HsiCube> {
        if self.space == Space::Absorbance {
            return Err(Error::invalid("cube is already in absorbance space"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid("absorbance floor must be positive"));
        }
        let values = self
            .values
            .iter()
            .map(|&r| -(r as f64).max(epsilon).log10() as f32)
            .collect();
        Ok(HsiCube { values, space: Space::Absorbance, ..self.clone_meta() })
    }

    /// Keeps bands `start..bands`.
    pub fn select_bands(&self, start: usize) -> Result<HsiCube> {
        if start >= self.bands {
            return Err(Error::invalid(format!(
                "band start {start} out of range for {} bands",
                self.bands
            )));
        }
        let plane = self.height * self.width;
        Ok(HsiCube {
            bands: self.bands - start,
            values: self.values[start * plane..].to_vec(),
            wavelengths: self.wavelengths[start..].to_vec(),
            ..self.clone_meta()
        })
    }

    /// Averages consecutive groups of `factor` bands.
    pub fn bin_bands(&self, factor: usize) -> Result<HsiCube> {
        if factor == 0 || !self.bands.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "{} bands not divisible by bin factor {factor}",
                self.bands
            )));
        }
        let out_bands = self.bands / factor;
        let plane = self.height * self.width;
        let mut values = vec![0f32; out_bands * plane];
        for (ob, out) in values.chunks_mut(plane).enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                let sum: f64 = (0..factor)
                    .map(|k| self.values[(ob * factor + k) * plane + i] as f64)
                    .sum();
                *o = (sum / factor as f64) as f32;
            }
        }
        let wavelengths = self
            .wavelengths
            .chunks(factor)
            .map(|g| (g.iter().map(|&w| w as f64).sum::<f64>() / factor as f64) as f32)
            .collect();
        Ok(HsiCube { bands: out_bands, values, wavelengths, ..self.clone_meta() })
    }

    /// Mean spectrum over the left-most and right-most columns.
    pub fn edge_column_spectrum(&self) -> Vec<f64> {
        let mut spectrum = vec![0.0; self.bands];
        let cols: &[usize] = if self.width == 1 { &[0] } else { &[0, self.width - 1] };
        let count = (cols.len() * self.height) as f64;
        for (b, s) in spectrum.iter_mut().enumerate() {
            let plane = self.band_plane(b);
            let mut acc = 0.0;
            for r in 0..self.height {
                for &c in cols {
                    acc += plane[r * self.width + c] as f64;
                }
            }
            *s = acc / count;
        }
        spectrum
    }

    /// Values widened to `f64`, band-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub(crate) fn from_parts_unchecked(
        bands: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        wavelengths: Vec<f32>,
        space: Space,
    ) -> Self {
        debug_assert_eq!(values.len(), bands * height * width);
        Self { bands, height, width, values, wavelengths, space }
    }

    fn clone_meta(&self) -> HsiCube {
        HsiCube {
            bands: self.bands,
            height: self.height,
            width: self.width,
            values: Vec::new(),
            wavelengths: self.wavelengths.clone(),
            space: self.space,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wl(n: usize) -> Vec<f32> {
        (0..n).map(|i| 700.0 + i as f32).collect()
    }

    #[test]
    fn absorbance_values() {
        let cube = HsiCube::new(3, 1, 1, vec![1.0, 0.1, 0.0], wl(3), Space::Reflectance).unwrap();
        let a = cube.to_absorbance(1e-6).unwrap();
        assert_eq!(a.space(), Space::Absorbance);
        assert_eq!(a.values()[0], 0.0);
        assert!((a.values()[1] - 1.0).abs() < 1e-6);
        assert!((a.values()[2] - 6.0).abs() < 1e-6);
        assert!(a.to_absorbance(1e-6).is_err());
    }

    #[test]
    fn band_selection() {
        let cube = HsiCube::from_fn(300, 2, 2, wl(300), Space::Reflectance, |b, _, _| b as f32).unwrap();
        let sel = cube.select_bands(176).unwrap();
        assert_eq!(sel.bands(), 124);
        assert_eq!(sel.wavelengths()[0], 876.0);
        assert_eq!(sel.get(0, 1, 1), 176.0);
        assert_eq!(cube.select_bands(0).unwrap(), cube);
        assert!(cube.select_bands(300).is_err());
    }

    #[test]
    fn band_binning() {
        let cube = HsiCube::from_fn(124, 1, 2, wl(124), Space::Reflectance, |_, _, _| 0.3).unwrap();
        let binned = cube.bin_bands(2).unwrap();
        assert_eq!(binned.bands(), 62);
        assert!(binned.values().iter().all(|&v| v == 0.3));

        let cube =
            HsiCube::from_fn(4, 1, 1, wl(4), Space::Reflectance, |b, _, _| 2.0 * b as f32).unwrap();
        let binned = cube.bin_bands(2).unwrap();
        assert_eq!(binned.values(), &[1.0, 5.0]);
        assert_eq!(binned.wavelengths(), &[700.5, 702.5]);
        assert!(HsiCube::from_fn(5, 1, 1, wl(5), Space::Reflectance, |_, _, _| 1.0)
            .unwrap()
            .bin_bands(2)
            .is_err());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(HsiCube::new(2, 1, 1, vec![1.0], wl(2), Space::Reflectance).is_err());
        assert!(HsiCube::new(1, 1, 1, vec![f32::NAN], wl(1), Space::Absorbance).is_err());
        assert!(HsiCube::new(1, 1, 1, vec![-0.1], wl(1), Space::Reflectance).is_err());
        assert!(HsiCube::new(2, 1, 1, vec![1.0, 1.0], vec![2.0, 1.0], Space::Reflectance).is_err());
    }
}
