use nalgebra::DMatrix;

use super::pls::PlsModel;
use crate::error::{Error, Result};
use crate::hsidata::{HsiCube, Mask, Space};
use crate::map::{difference_support, ChemicalMap};
use crate::par;

/// A mean absorbance spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub wavelengths: Vec<f64>,
}

/// Per-band mean over the union of masked pixels of all slices of one sample.
pub fn mean_belly_spectrum(slices: &[(&HsiCube, &Mask)]) -> Result<Spectrum> {
    let first = slices.first().ok_or(Error::EmptyMask)?.0;
    let bands = first.bands();
    let mut sum = vec![0.0; bands];
    let mut count = 0usize;
    for (cube, mask) in slices {
        if cube.space() != Space::Absorbance {
            return Err(Error::invalid("mean spectra are computed in absorbance space"));
        }
        if cube.bands() != bands || cube.wavelengths() != first.wavelengths() {
            return Err(Error::shape("slices disagree on bands"));
        }
        if (cube.height(), cube.width()) != (mask.height(), mask.width()) {
            return Err(Error::shape("cube and mask dimensions differ"));
        }
        let fg: Vec<usize> = (0..mask.values().len()).filter(|&i| mask.values()[i] != 0).collect();
        count += fg.len();
        for (b, s) in sum.iter_mut().enumerate() {
            let plane = cube.band_plane(b);
            *s += fg.iter().map(|&i| plane[i] as f64).sum::<f64>();
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(Spectrum {
        values: sum.into_iter().map(|s| s / count as f64).collect(),
        wavelengths: first.wavelengths().iter().map(|&w| w as f64).collect(),
    })
}

/// Stacks spectra as matrix rows.
pub fn spectra_matrix(spectra: &[Spectrum]) -> Result<DMatrix<f64>> {
    let p = spectra.first().map_or(0, |s| s.values.len());
    if spectra.iter().any(|s| s.values.len() != p) {
        return Err(Error::shape("spectra differ in length"));
    }
    Ok(DMatrix::from_fn(spectra.len(), p, |i, j| spectra[i].values[j]))
}

/// Pixel-wise PLS map: every masked pixel's spectrum goes through the
/// model's preprocessing and regression, as do the neighbours that spatial
/// statistics difference against. Other pixels are 0. Values are not
/// clamped.
pub fn pls_chemical_map(model: &PlsModel, cube: &HsiCube, mask: &Mask) -> Result<ChemicalMap> {
    if cube.space() != Space::Absorbance {
        return Err(Error::invalid("pixel-wise PLS expects an absorbance cube"));
    }
    if cube.bands() != model.raw_bands {
        return Err(Error::shape(format!("model expects {} bands, cube has {}", model.raw_bands, cube.bands())));
    }
    if (cube.height(), cube.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape("cube and mask dimensions differ"));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (h, w) = (cube.height(), cube.width());
    let support = difference_support(mask);
    let rows: Vec<Result<Vec<f64>>> = par::map_range(h, |r| {
        let mut out = vec![0.0; w];
        for (c, o) in out.iter_mut().enumerate() {
            if support.get(r, c) {
                let features = model.preprocessing.apply_one(&cube.pixel_spectrum(r, c))?;
                *o = model.predict_preprocessed(&features, model.n_components);
            }
        }
        Ok(out)
    });
    let mut values = Vec::with_capacity(h * w);
    for row in rows {
        values.extend(row?);
    }
    ChemicalMap::new(values, mask.clone())
}
